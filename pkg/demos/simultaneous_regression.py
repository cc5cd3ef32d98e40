"""Three linear regressions fitted one at a time or as one smooth family.

    python3 demos/simultaneous_regression.py

With mu = 0 the simultaneous fit reproduces the separate fits at the
anchors; a positive ridge trades a little anchor accuracy for smoothness.
"""

from cstarnet import linreg

print(linreg.format_table(linreg.comparison_table(noise=0.1, seed=1)))
