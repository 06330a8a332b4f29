"""Least and greatest solutions of Horn formula equations as explicit fixed points."""

__version__ = "0.1.0"
