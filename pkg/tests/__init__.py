"""
Test package for swnet.
"""
