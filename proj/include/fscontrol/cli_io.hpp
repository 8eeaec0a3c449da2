#pragma once

// Scenario plumbing around the solver stack: a small key=value config format,
// end-to-end pipeline execution with a JSON run manifest, CSV export of
// control signals and fields, and a one-command comparison against the
// published 2D experiment tables.

#include <fscontrol/constrained_dual.hpp>

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace fsc {

struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_no, const std::string& what)
      : std::runtime_error("parse error at line " + std::to_string(line_no) + ": " + what),
        line(line_no) {}
};

struct ValidationError : std::runtime_error {
  std::string key;
  ValidationError(const std::string& key_name, const std::string& what)
      : std::runtime_error("invalid config key '" + key_name + "': " + what),
        key(key_name) {}
};

// One spatial field, resolvable against the built-in constructors.
struct FieldSpec {
  std::string kind;               // constant | indicator | frustum | frustum_product | sine_mode
  double value = 0.0;             // constant
  std::vector<double> lo, hi;     // indicator bounds per axis
  double height = 1.0;            // frustum plateau
  double ramp = 0.1;              // frustum ramp fraction
  std::vector<int> mode;          // sine_mode numbers per axis
};

struct ConstraintConfig {
  std::vector<double> mu;         // one bound per channel (single value broadcasts)
  int N_lambda = 30;
  double tol = 1e-8;
  long max_iter = 200000;
};

struct OutputConfig {
  std::string directory = "out";
  int n_time_samples = 10000;     // dense scan for the sup norm
  int n_clip_samples = 10001;     // feasibility rounding grid
  int csv_signal_samples = 2001;
  int csv_grid = 65;              // field export points per axis
};

struct ScenarioConfig {
  std::vector<double> lengths;
  std::string operator_type = "heat";
  double k_alpha = 1.0;
  std::optional<FieldSpec> gen_a, gen_b, gen_c;  // general1d coefficients
  int order = 0;                  // per-axis spectral order K_a
  double t_F = 1.0;
  double rho_F = 0.0;
  double delta_S = 1e-3;
  std::vector<FieldSpec> actuators;
  FieldSpec target;
  std::optional<FieldSpec> initial;      // default: start from rest
  std::optional<FieldSpec> disturbance;  // constant-in-time source, default none
  std::optional<ConstraintConfig> constraint;
  OutputConfig output;
};

ScenarioConfig load_config(const std::string& path);

ScalarField<double> make_field(const FieldSpec& spec, const BoxDomain<double>& domain);

nlohmann::json config_to_json(const ScenarioConfig& cfg);
ScenarioConfig config_from_json(const nlohmann::json& j);

// Runs the full pipeline, writes control CSVs, field CSVs, and manifest.json
// under the configured output directory (FSCONTROL_OUTDIR overrides it), and
// returns the manifest. Errors from any stage are rethrown with the stage
// name prefixed.
nlohmann::json run_scenario(const ScenarioConfig& cfg);

// Re-runs the pipeline from the config echoed in an existing manifest.
nlohmann::json export_from_manifest(const std::string& manifest_path);

void export_signal_csv(const SampledSignal<double>& signal, const std::string& path);
void export_field_csv(const CoeffVector<double>& coeffs, const SpectralBasis<double>& basis,
                      int grid_n, const std::string& path);

// Prints computed-vs-published cells for the 2D experiment (both rho_F values,
// unconstrained and constrained) and returns a nonzero exit code if any gated
// cell misses its tolerance. tol_scale widens every gate.
int reproduce_paper_2d(std::ostream& os, double tol_scale = 1.0,
                       std::optional<double> rho_f_filter = std::nullopt,
                       bool skip_constrained = false);

}  // namespace fsc
