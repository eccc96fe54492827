"""Optimal symmetric uniform quantizer step sizes, bits 1..16.

Generated by scripts/gen_step_table.py; do not edit by hand.
"""

STEP_TABLE = {
    "uniform": (
        1.0,  # 1
        0.5,  # 2
        0.25,  # 3
        0.125,  # 4
        0.0625,  # 5
        0.03125,  # 6
        0.015625,  # 7
        0.0078125,  # 8
        0.00390625,  # 9
        0.001953125,  # 10
        0.0009765625,  # 11
        0.00048828125,  # 12
        0.000244140625,  # 13
        0.0001220703125,  # 14
        6.103515625e-05,  # 15
        3.0517578125e-05,  # 16
    ),
    "gaussian": (
        1.595769123909518,  # 1
        0.9956866776756963,  # 2
        0.5860194410751672,  # 3
        0.33520060836688703,  # 4
        0.18813879300404035,  # 5
        0.10406301039803721,  # 6
        0.05686767442232497,  # 7
        0.030762385814131075,  # 8
        0.016498958009954295,  # 9
        0.00878546639966031,  # 10
        0.004649838370578668,  # 11
        0.00244841183569803,  # 12
        0.001283621200668601,  # 13
        0.0006704518138776999,  # 14
        0.00034905894184495507,  # 15
        0.00018122347247780677,  # 16
    ),
    "laplacian": (
        1.4142135562292526,  # 1
        1.087392690338469,  # 2
        0.7309331894039384,  # 3
        0.46099538316844546,  # 4
        0.2799885470081229,  # 5
        0.1656807229108765,  # 6
        0.09609891762170703,  # 7
        0.05484433338947953,  # 8
        0.030882774045770882,  # 9
        0.017195515304438507,  # 10
        0.00948390759901886,  # 11
        0.005188560512540101,  # 12
        0.002818991311837412,  # 13
        0.0015224279431622018,  # 14
        0.000817924001140772,  # 15
        0.0004374202042454789,  # 16
    ),
    "gamma": (
        1.1547005475877357,  # 1
        1.0660113395135917,  # 2
        0.7957371499701271,  # 3
        0.5399598815217308,  # 4
        0.34594867599605306,  # 5
        0.21300224138455187,  # 6
        0.1273121994598407,  # 7
        0.07436153721338465,  # 8
        0.042644871431251105,  # 9
        0.02409614850251026,  # 10
        0.0134508792214489,  # 11
        0.007433168386995783,  # 12
        0.004073041195560966,  # 13
        0.002215847607450901,  # 14
        0.0011980697199401842,  # 15
        0.0006443184852791516,  # 16
    ),
}
