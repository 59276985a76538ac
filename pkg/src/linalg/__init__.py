from src.linalg.pca import PcaBasis, fit, from_coords, tail_projector, to_coords
