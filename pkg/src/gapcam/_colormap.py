"""Byte-pinned 256-entry blue-to-red colormap used by the overlay renderer.

The table is shipped as a frozen hex literal rather than computed at import
time so that rendered overlays are byte-identical across numpy versions and
platforms.  The values follow the classic piecewise-linear "jet" ramps
``clip(1.5 - |4x - c|, 0, 1)`` with ``c`` = 3, 2, 1 for red, green, blue,
sampled at bin centers ``x = (i + 0.5) / 256`` and rounded half-to-even.
"""

from __future__ import annotations

import numpy as np

_JET_HEX = (
    "00008100008500008900008d00009100009500009900009d0000a10000a50000"
    "a90000ad0000b10000b50000b90000bd0000c10000c50000c90000cd0000d100"
    "00d50000d90000dd0000e10000e50000e90000ed0000f10000f50000f90000fd"
    "0002ff0006ff000aff000eff0012ff0016ff001aff001eff0022ff0026ff002a"
    "ff002eff0032ff0036ff003aff003eff0042ff0046ff004aff004eff0052ff00"
    "56ff005aff005eff0062ff0066ff006aff006eff0072ff0076ff007aff007eff"
    "0081ff0085ff0089ff008dff0091ff0095ff0099ff009dff00a1ff00a5ff00a9"
    "ff00adff00b1ff00b5ff00b9ff00bdff00c1ff00c5ff00c9ff00cdff00d1ff00"
    "d5ff00d9ff00ddff00e1ff00e5ff00e9ff00edff00f1ff00f5ff00f9ff00fdff"
    "02fffd06fff90afff50efff112ffed16ffe91affe51effe122ffdd26ffd92aff"
    "d52effd132ffcd36ffc93affc53effc142ffbd46ffb94affb54effb152ffad56"
    "ffa95affa55effa162ff9d66ff996aff956eff9172ff8d76ff897aff857eff81"
    "81ff7e85ff7a89ff768dff7291ff6e95ff6a99ff669dff62a1ff5ea5ff5aa9ff"
    "56adff52b1ff4eb5ff4ab9ff46bdff42c1ff3ec5ff3ac9ff36cdff32d1ff2ed5"
    "ff2ad9ff26ddff22e1ff1ee5ff1ae9ff16edff12f1ff0ef5ff0af9ff06fdff02"
    "fffd00fff900fff500fff100ffed00ffe900ffe500ffe100ffdd00ffd900ffd5"
    "00ffd100ffcd00ffc900ffc500ffc100ffbd00ffb900ffb500ffb100ffad00ff"
    "a900ffa500ffa100ff9d00ff9900ff9500ff9100ff8d00ff8900ff8500ff8100"
    "ff7e00ff7a00ff7600ff7200ff6e00ff6a00ff6600ff6200ff5e00ff5a00ff56"
    "00ff5200ff4e00ff4a00ff4600ff4200ff3e00ff3a00ff3600ff3200ff2e00ff"
    "2a00ff2600ff2200ff1e00ff1a00ff1600ff1200ff0e00ff0a00ff0600ff0200"
    "fd0000f90000f50000f10000ed0000e90000e50000e10000dd0000d90000d500"
    "00d10000cd0000c90000c50000c10000bd0000b90000b50000b10000ad0000a9"
    "0000a50000a100009d00009900009500009100008d0000890000850000810000"
)

# (256, 3) uint8, rows are RGB triples from cold (dark blue) to hot (dark red).
JET_LUT: np.ndarray = np.frombuffer(bytes.fromhex(_JET_HEX), dtype=np.uint8).reshape(256, 3)
JET_LUT.setflags(write=False)
