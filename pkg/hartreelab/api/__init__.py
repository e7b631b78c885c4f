# Expose the experiment entry points at hartreelab.api.* so the CLI and
# notebooks share one surface:
#  - hartreelab.api.run_experiment
#  - hartreelab.api.run_convergence / run_duhamel / run_liouville / run_algebra_audit
from .experiments import emit_all, run_algebra_audit, run_convergence, run_duhamel, run_experiment, run_liouville  # noqa: F401

# Table assembly and I/O:
#  - hartreelab.api.ResultTable
#  - hartreelab.api.emit / read_table
from .tables import ResultTable, emit, read_csv, read_json_lines, read_table, write_csv, write_json_lines  # noqa: F401
