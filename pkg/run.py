#!/usr/bin/env python3
"""
Main entry point for the spin-network lab command line
"""
from spinlab.cli import cli

if __name__ == '__main__':
    cli()
