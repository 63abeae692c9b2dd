#!/usr/bin/env python3
"""
monodrift command-line entry point.

Run this script with a subcommand and a TOML config, for example
``python monodrift_main.py check --config runs/burgers.toml``.
"""

import sys

from monodrift.cli import main

if __name__ == "__main__":
    sys.exit(main())
