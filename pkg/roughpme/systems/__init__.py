# Simulation Systems Package
