"""Point-cloud semantic segmentation through cyclic point-to-plane projections."""
