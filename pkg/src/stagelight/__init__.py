"""stagelight: generate stage light sequences (hue/value tokens) from music.

Subpackage map:

* ``lightcodec``  -- video frames -> per-frame light tokens, cyclic hue metric
* ``audiofeat``   -- WAV input -> 10 Hz feature matrices (log-mel default)
* ``vmm``         -- von Mises mixture fits of hue distributions (EM + BIC)
* ``model``       -- the encoder-decoder generator with the music/light skip term
* ``merge``       -- drop-and-rescale parameter merging, low-rank adapters
* ``training``    -- masked-recovery pretraining, adaptive-weight fine-tuning
* ``sampling``    -- temperature sampling with per-step distance restriction
* ``dataset``     -- SBL1 container, record building, windowing
* ``metrics``     -- cyclic RMSE/MAE reports
* ``render``      -- light sequence -> strip image
* ``synth``       -- rule-labelled synthetic corpora for learnability checks
* ``cli``         -- the ``stagelight`` command
"""

__version__ = "0.1.0"
