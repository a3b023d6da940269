"""
Test package for binloop.
"""
