"""
Command handlers for the cfhet command line
"""
