app_name = "hartreelab"
app_title = "Hartree Lab"
app_publisher = "TierneyMorris Pty Ltd"
app_description = "Finite-dimensional laboratory for the mean-field limit of many-boson dynamics"
app_email = "support@sgcaustralia.com.au"
app_license = "mit"

# Model presets
# ------------------
# Each preset is a factory returning a ModelSpec; keyword arguments come from
# the [model] section of an experiment config.

model_presets = {
	"kerr1": "hartreelab.models.kerr1",
	"lattice-delta": "hartreelab.models.lattice_delta",
	"lattice-hartree": "hartreelab.models.lattice_hartree",
}

# Experiment kinds
# ------------------
# Each entry runs one experiment on a validated config and returns ResultTables.

experiment_kinds = {
	"convergence": "hartreelab.api.experiments.run_convergence",
	"duhamel": "hartreelab.api.experiments.run_duhamel",
	"liouville": "hartreelab.api.experiments.run_liouville",
	"algebra-audit": "hartreelab.api.experiments.run_algebra_audit",
}

# Table writers
# ------------------

table_writers = {
	"csv": "hartreelab.api.tables.write_csv",
	"json-lines": "hartreelab.api.tables.write_json_lines",
}

table_readers = {
	"csv": "hartreelab.api.tables.read_csv",
	"json-lines": "hartreelab.api.tables.read_json_lines",
}

# Measure families
# ------------------

measure_families = {
	"dirac": "hartreelab.liouville.dirac_measure",
	"atomic": "hartreelab.liouville.atomic_measure",
	"gaussian-on-sphere": "hartreelab.liouville.gaussian_on_sphere",
	"circle": "hartreelab.liouville.circle_measure",
}
