#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kavg/ensemble.hpp"
#include "kavg/grid.hpp"
#include "kavg/model.hpp"
#include "kavg/particle_continuous.hpp"

namespace kavg::experiments {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Experiment {
  fig2_histogram,
  fig4_density,
  fig5_entropy,
  poc_rate,
  w2_contraction,
  com_diffusion,
  continuous_decay,
};

inline const std::map<std::string, Experiment>& experiment_names() {
  static const std::map<std::string, Experiment> names{
      {"fig2-histogram", Experiment::fig2_histogram}, {"fig4-density", Experiment::fig4_density},
      {"fig5-entropy", Experiment::fig5_entropy},     {"poc-rate", Experiment::poc_rate},
      {"w2-contraction", Experiment::w2_contraction}, {"com-diffusion", Experiment::com_diffusion},
      {"continuous-decay", Experiment::continuous_decay},
  };
  return names;
}

inline std::string to_string(Experiment e) {
  for (const auto& [name, value] : experiment_names())
    if (value == e) return name;
  return "unknown";
}

inline std::optional<Experiment> parse_experiment(const std::string& name) {
  const auto it = experiment_names().find(name);
  if (it == experiment_names().end()) return std::nullopt;
  return it->second;
}

struct InitSpec {
  enum class Kind { uniform, laplace, gaussian, point, file };
  Kind kind = Kind::uniform;
  double param = 1.0;  ///< half-width for uniform, variance for gaussian, location for point
  std::string path;

  std::string describe() const {
    std::ostringstream s;
    s << std::setprecision(17);
    switch (kind) {
      case Kind::uniform: s << "uniform(" << param << ")"; break;
      case Kind::laplace: s << "laplace"; break;
      case Kind::gaussian: s << "gaussian(" << param << ")"; break;
      case Kind::point: s << "point(" << param << ")"; break;
      case Kind::file: s << "file(" << path << ")"; break;
    }
    return s.str();
  }
};

inline InitSpec parse_init(const std::string& text) {
  InitSpec spec;
  const auto open = text.find('(');
  const std::string head = text.substr(0, open);
  std::string arg;
  if (open != std::string::npos) {
    const auto close = text.rfind(')');
    if (close == std::string::npos || close < open) throw ConfigError("init: unbalanced parentheses in '" + text + "'");
    arg = text.substr(open + 1, close - open - 1);
  }
  auto number = [&](double fallback) {
    if (arg.empty()) return fallback;
    try {
      return std::stod(arg);
    } catch (const std::exception&) {
      throw ConfigError("init: bad numeric argument in '" + text + "'");
    }
  };
  if (head == "uniform") {
    spec.kind = InitSpec::Kind::uniform;
    spec.param = number(1.0);
  } else if (head == "laplace") {
    spec.kind = InitSpec::Kind::laplace;
  } else if (head == "gaussian") {
    spec.kind = InitSpec::Kind::gaussian;
    spec.param = number(1.0);
  } else if (head == "point") {
    spec.kind = InitSpec::Kind::point;
    spec.param = number(0.0);
  } else if (head == "file") {
    spec.kind = InitSpec::Kind::file;
    spec.path = arg;
    if (arg.empty()) throw ConfigError("init: file() needs a path");
  } else {
    throw ConfigError("init: unknown initial condition '" + text + "'");
  }
  return spec;
}

/// Parses "1,2,3", "1..20" or a mix such as "1..4,10".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok.empty()) continue;
    try {
      const auto dots = tok.find("..");
      if (dots != std::string::npos) {
        const auto lo = std::stoull(tok.substr(0, dots));
        const auto hi = std::stoull(tok.substr(dots + 2));
        if (hi < lo) throw ConfigError("seeds: empty range '" + tok + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      } else {
        out.push_back(std::stoull(tok));
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("seeds: cannot parse '" + tok + "'");
    }
  }
  return out;
}

template <class T>
std::vector<T> parse_number_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream in(tok);
    T v{};
    if (!(in >> v)) throw ConfigError("cannot parse number list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

/// One experiment run, loaded from one INI section.
///
/// The section name is the experiment name, optionally followed by
/// ".variant" (e.g. `[w2-contraction.laplace-k2]`). Keys are flat.
struct ExperimentConfig {
  Experiment experiment = Experiment::fig4_density;
  std::string section;  ///< section name, used as the output subdirectory
  ModelParams params{1, 5, 0.1, 1.0, 5000};
  GridSpec grid = GridSpec::default_grid();
  std::vector<std::uint64_t> seeds{1};
  InitSpec init;
  std::string output_dir = "kavg-out";

  int steps = 5;                 ///< discrete steps (particles or density iterations)
  std::int64_t replicas = 1;     ///< replicas per seed
  std::vector<std::int64_t> n_values{200, 800, 3200, 12800};
  double t_end = 5.0;            ///< continuous-time horizon for the density evolution
  double dt = 0.05;
  std::int64_t mc_particles = 5000;
  double mc_t_end = 20.0;
  continuous::RateMode rate_mode = continuous::RateMode::per_particle;
  bool exclude_self = false;
  int histogram_bins = 80;

  /// gamma = 1/K, the per-step contraction factor of the relative entropy.
  double gamma() const { return 1.0 / static_cast<double>(params.K); }

  /// Canonical key=value text; hashed into the run manifest.
  std::string canonical() const {
    std::ostringstream s;
    s << std::setprecision(17);
    s << "experiment=" << to_string(experiment) << "\nsection=" << section << "\nd=" << params.d
      << "\nK=" << params.K << "\nsigma=" << params.sigma << "\nlambda=" << params.lambda << "\nN=" << params.N
      << "\nhalf_width=" << grid.half_width << "\npoints=" << grid.points << "\nseeds=";
    for (std::size_t i = 0; i < seeds.size(); ++i) s << (i ? "," : "") << seeds[i];
    s << "\ninit=" << init.describe() << "\nsteps=" << steps << "\nreplicas=" << replicas << "\nn_values=";
    for (std::size_t i = 0; i < n_values.size(); ++i) s << (i ? "," : "") << n_values[i];
    s << "\nt_end=" << t_end << "\ndt=" << dt << "\nmc_particles=" << mc_particles << "\nmc_t_end=" << mc_t_end
      << "\ntotal_rate_mode=" << (rate_mode == continuous::RateMode::per_particle ? "per_particle" : "global")
      << "\nexclude_self=" << exclude_self << "\nhistogram_bins=" << histogram_bins << '\n';
    return s.str();
  }

  bool uses_grid() const { return experiment != Experiment::com_diffusion; }

  /// Experiment-specific completeness and precondition checks. Messages name the violated precondition.
  void validate() const {
    try {
      params.validate();
    } catch (const PreconditionError& e) {
      throw ConfigError(section + ": " + e.what());
    }
    if (seeds.empty()) throw ConfigError(section + ": seeds must be nonempty");
    if (steps < 0) throw ConfigError(section + ": steps must be >= 0");
    if (replicas < 1) throw ConfigError(section + ": replicas must be >= 1");
    if (uses_grid()) {
      try {
        (void)GridSpec::make(grid.half_width, grid.points);
      } catch (const PreconditionError& e) {
        throw ConfigError(section + ": " + e.what());
      }
      if (grid.spacing() > params.sigma / 5.0) {
        std::ostringstream msg;
        msg << section << ": precondition 'grid resolves sigma' violated (dx = " << grid.spacing()
            << " > sigma/5 = " << params.sigma / 5.0 << ")";
        throw ConfigError(msg.str());
      }
      if (params.K < 2) throw ConfigError(section + ": density experiments need K >= 2");
      if (params.d != 1) throw ConfigError(section + ": the grid engine is one-dimensional (d must be 1)");
    }
    switch (experiment) {
      case Experiment::poc_rate:
        if (n_values.size() < 3) throw ConfigError(section + ": poc-rate needs at least 3 N values");
        break;
      case Experiment::continuous_decay:
        if (params.lambda * dt > 0.05)
          throw ConfigError(section + ": precondition 'lambda*dt <= 0.05' violated");
        break;
      case Experiment::fig2_histogram:
      case Experiment::com_diffusion:
        if (init.kind == InitSpec::Kind::file && init.path.empty()) throw ConfigError(section + ": file init needs a path");
        break;
      default:
        break;
    }
  }
};

namespace detail {

template <class T>
T get_or(const boost::property_tree::ptree& section, const std::string& key, T fallback) {
  const auto raw = section.get_optional<std::string>(key);
  if (!raw) return fallback;
  // get<T>(key, fallback) falls back silently on unparsable values
  const auto v = section.get_optional<T>(key);
  if (!v) throw boost::property_tree::ptree_bad_data("key '" + key + "': cannot parse '" + *raw + "'", *raw);
  return *v;
}

}  // namespace detail

/// Builds the config for one INI section.
inline ExperimentConfig config_from_section(const std::string& name, const boost::property_tree::ptree& sec) {
  ExperimentConfig c;
  c.section = name;
  const auto base = name.substr(0, name.find('.'));
  const auto exp = parse_experiment(base);
  if (!exp) throw ConfigError("unknown experiment section [" + name + "]");
  c.experiment = *exp;
  try {
    c.params.d = detail::get_or(sec, "d", c.params.d);
    c.params.K = detail::get_or(sec, "K", c.params.K);
    c.params.sigma = detail::get_or(sec, "sigma", c.params.sigma);
    c.params.lambda = detail::get_or(sec, "lambda", c.params.lambda);
    c.params.N = detail::get_or<std::int64_t>(sec, "N", c.params.N);
    c.grid.half_width = detail::get_or(sec, "half_width", c.grid.half_width);
    c.grid.points = detail::get_or<std::int64_t>(sec, "points", c.grid.points);
    if (auto s = sec.get_optional<std::string>("seeds")) c.seeds = parse_seed_list(*s);
    if (auto s = sec.get_optional<std::string>("init")) c.init = parse_init(*s);
    c.output_dir = detail::get_or<std::string>(sec, "output_dir", c.output_dir);
    c.steps = detail::get_or(sec, "steps", c.steps);
    c.replicas = detail::get_or<std::int64_t>(sec, "replicas", c.replicas);
    if (auto s = sec.get_optional<std::string>("n_values")) c.n_values = parse_number_list<std::int64_t>(*s);
    c.t_end = detail::get_or(sec, "t_end", c.t_end);
    c.dt = detail::get_or(sec, "dt", c.dt);
    c.mc_particles = detail::get_or<std::int64_t>(sec, "mc_particles", c.mc_particles);
    c.mc_t_end = detail::get_or(sec, "mc_t_end", c.mc_t_end);
    if (auto s = sec.get_optional<std::string>("total_rate_mode")) {
      if (*s == "per_particle")
        c.rate_mode = continuous::RateMode::per_particle;
      else if (*s == "global")
        c.rate_mode = continuous::RateMode::global;
      else
        throw ConfigError(name + ": total_rate_mode must be per_particle or global");
    }
    c.exclude_self = detail::get_or(sec, "exclude_self", c.exclude_self);
    c.histogram_bins = detail::get_or(sec, "histogram_bins", c.histogram_bins);
  } catch (const boost::property_tree::ptree_bad_data& e) {
    throw ConfigError(name + ": " + e.what());
  }
  for (const auto& [key, _] : sec) {
    static const std::vector<std::string> known{
        "d",     "K",     "sigma",    "lambda", "N",  "half_width",   "points",   "seeds",     "init",
        "output_dir", "steps", "replicas", "n_values", "t_end", "dt", "mc_particles", "mc_t_end", "total_rate_mode",
        "exclude_self", "histogram_bins"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(name + ": unknown key '" + key + "'");
  }
  return c;
}

/// All experiment sections of an INI file, in file order.
inline std::vector<ExperimentConfig> load_config_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  std::vector<ExperimentConfig> out;
  for (const auto& [name, sec] : tree) {
    if (sec.empty()) throw ConfigError(path.string() + ": top-level key '" + name + "' outside a section");
    out.push_back(config_from_section(name, sec));
  }
  return out;
}

/// Every *.ini file in a directory, sorted by file name.
inline std::vector<ExperimentConfig> load_suite(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("suite directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".ini") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<ExperimentConfig> out;
  for (const auto& f : files) {
    auto part = load_config_file(f);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace kavg::experiments
