"""Audio sentiment analysis toolkit.

A two-branch pipeline for utterance-level sentiment classification of
audio: an utterance branch that runs stacked bidirectional LSTMs over
frame-level acoustic feature matrices, a spectrogram branch that runs a
small residual CNN over log-mel images, and an attention head that fuses
the two branch vectors into a single audio sentiment vector (ASV).

Modules:

* ``asvkit.audio_io``   WAV decoding, resampling, manifests, context windows.
* ``asvkit.dsp``        STFT and the seven acoustic feature extractors.
* ``asvkit.nn``         Reverse-mode autodiff, layers, optimizers, checkpoints.
* ``asvkit.model``      Branch networks, fusion head, prediction, ASV export.
* ``asvkit.train_eval`` Label schemes, splits, training loop, metrics, sweeps.
* ``asvkit.cli``        Command line front end.
"""

__version__ = "0.1.0"
