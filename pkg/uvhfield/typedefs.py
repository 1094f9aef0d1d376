# --------------------------------------------------------------------
# typedefs.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Monday March 3, 2025
# --------------------------------------------------------------------

from pathlib import Path
from typing import Any, Union

import numpy as np
import numpy.typing as npt

# --------------------------------------------------------------------
Array = npt.NDArray[np.floating]
IntArray = npt.NDArray[np.integer]
BoolArray = npt.NDArray[np.bool_]
PathSpec = Union[str | Path]
JsonDict = dict[str, Any]
