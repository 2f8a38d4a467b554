"""
Test package for mtvcbf
"""
