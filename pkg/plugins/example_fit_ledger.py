import os
from pathlib import Path

from vecal.plugin import BasePlugin


class FitLedgerPlugin(BasePlugin):
    """Example plugin that appends every fitted model's R² to a text ledger.

    Enabled only when ``VECAL_FIT_LEDGER`` names the ledger file.
    """

    def __init__(self):
        target = os.getenv("VECAL_FIT_LEDGER")
        self.ledger_path = Path(target).expanduser() if target else None

    def after_fit(self, report, **kwargs):
        if self.ledger_path is None:
            return
        mode = kwargs.get("mode", "")
        with self.ledger_path.open("a") as f:
            f.write(f"{report.kind.value}\t{mode}\t{report.r2_adj_train}\t{report.r2_adj_test}\n")
