"""Forward models and parameter extraction for one-port SAW resonators.

Modules: :mod:`~sawkit.domain` (types and calibration), :mod:`~sawkit.com_sim`
(cavity forward model and synthesis), :mod:`~sawkit.resonance_extract`
(circle-fit extraction), :mod:`~sawkit.loss_models` and :mod:`~sawkit.twotone`
(TLS models and fits), :mod:`~sawkit.fit_engine` (Levenberg-Marquardt and
digamma), :mod:`~sawkit.io` and :mod:`~sawkit.cli` (files and command line).
"""

__version__ = "0.1.0"
