# SPDX-License-Identifier: Apache-2.0
import os
import sys

# Under ctest the package comes from the build tree. An editable install
# registers an import hook that would otherwise win over PYTHONPATH.
if os.environ.get("DRNET_EXPECT_MODULE_DIR"):
    sys.meta_path[:] = [f for f in sys.meta_path if not type(f).__module__.startswith("_editable_skbc_drnet")]
