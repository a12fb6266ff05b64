"""Privacy-preserving breast-mass malignancy pipeline.

Subsystems:

- :mod:`privmass.ingest` -- mass-patch extraction, resizing, per-patient splits
- :mod:`privmass.gan` -- malignancy-conditioned GAN training and sampling
- :mod:`privmass.accountant` / :mod:`privmass.dpsgd` -- RDP accounting and
  DP-SGD mechanics (clipping, noisy aggregation, calibration, group privacy)
- :mod:`privmass.classify` -- windowed-attention malignancy classifier and
  its five training regimes
- :mod:`privmass.frechet`, :mod:`privmass.radiomics`, :mod:`privmass.metrics`,
  :mod:`privmass.evaluation` -- Frechet distances over pluggable embeddings
  and radiomics features, AUROC/AUPRC, subset/seed aggregation protocols
- :mod:`privmass.runner` / :mod:`privmass.cli` -- config-driven experiment
  grids with resumable run records
"""

__version__ = "0.1.0"
