"""Occlusion-aware differentiable image-space bokeh rendering."""
