"""synthex-forge: synthetic X-ray dataset generation and evaluation from
annotated CT volumes, with three simulation realism levels, seeded domain
randomization, landmark/segmentation label propagation, and the matching
evaluation metrics."""

__version__ = "0.1.0"
