#!/usr/bin/env python3
"""
Rough Porous Media Lab - Main Entry Point
Simulations and property checks for porous medium and fast diffusion
equations driven by rough conservative noise
"""

import sys

from roughpme.engine.lab import main

if __name__ == "__main__":
    sys.exit(main())
