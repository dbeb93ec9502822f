"""Depth Supervision Toolkit"""
