"""Analysis filter banks (decomposition low-pass / high-pass) for the bundled wavelets."""

WAVELETS = {
    "haar": (
        (
            0.7071067811865476,
            0.7071067811865476,
        ),
        (
            -0.7071067811865476,
            0.7071067811865476,
        ),
    ),
    "db4": (
        (
            -0.010597401785069032,
            0.0328830116668852,
            0.030841381835560764,
            -0.18703481171909309,
            -0.027983769416859854,
            0.6308807679298589,
            0.7148465705529157,
            0.2303778133088965,
        ),
        (
            -0.2303778133088965,
            0.7148465705529157,
            -0.6308807679298589,
            -0.027983769416859854,
            0.18703481171909309,
            0.030841381835560764,
            -0.0328830116668852,
            -0.010597401785069032,
        ),
    ),
    "rbio3.9": (
        (
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.1767766952966369,
            0.5303300858899106,
            0.5303300858899106,
            0.1767766952966369,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ),
        (
            0.0006797443727836989,
            0.002039233118351097,
            -0.005060319219611981,
            -0.020618912641105536,
            0.014112787930175844,
            0.09913478249423216,
            -0.012300136269419315,
            -0.32019196836077857,
            -0.0020500227115698858,
            0.9421257006782068,
            -0.9421257006782068,
            0.0020500227115698858,
            0.32019196836077857,
            0.012300136269419315,
            -0.09913478249423216,
            -0.014112787930175844,
            0.020618912641105536,
            0.005060319219611981,
            -0.002039233118351097,
            -0.0006797443727836989,
        ),
    ),
}
