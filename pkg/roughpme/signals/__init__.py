# Driving Signals Package
