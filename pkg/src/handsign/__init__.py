"""Hand-shape embedding and sign-gesture classification pipeline.

Two stages: a convolutional hand-shape embedder trained through an
iterative human-in-the-loop labeling workflow, and per-hand recurrent
sequence classifiers over the embeddings with late score fusion.
Includes a synthetic-data generator, a leave-one-subject-out evaluation
harness, an annotation backend service and an orchestration CLI.
"""

__version__ = "0.1.0"
