"""Rigid-motion segmentation of scene flow."""
