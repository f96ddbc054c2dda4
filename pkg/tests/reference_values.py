"""Frozen outputs of independent oracles.

Self-panel matrices: tests/oracle_selfpanel.py (closed-form inner integral,
composite outer rule, Richardson over 4^5 and 4^6 sub-panels). Rows and
columns follow the vertex order of MICRO_TRIANGLES. Regenerate with
`python3 tests/oracle_selfpanel.py`.
"""
import numpy as np

SELF_PANEL = [
    np.array([0.00940577421563704, 0.00701332658710628, 0.00709533491382827,
              0.00701332666449147, 0.00918952360198008, 0.00677095863104355,
              0.00709533496762122, 0.00677095857897493, 0.00924419545399184]).reshape(3, 3),
    np.array([0.00708290547959919, 0.00526959716115037, 0.00535476119155233,
              0.00526959721939631, 0.0069297320178496, 0.00512500072992345,
              0.00535476122684967, 0.00512500069043895, 0.0069865077605337]).reshape(3, 3),
    np.array([0.00601932724182287, 0.00450475873117489, 0.00452423224024894,
              0.00450475878440755, 0.00578880136289228, 0.00417844319679411,
              0.00452423230286862, 0.00417844316327543, 0.00580178349247521]).reshape(3, 3),
]
