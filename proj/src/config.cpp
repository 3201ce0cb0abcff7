#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sowpic/core.hpp"

namespace sowpic {

namespace {

const char* axis_name(int a) { return a == 0 ? "x" : a == 1 ? "y" : "z"; }

std::vector<std::string> split_values(const std::string& value) {
  std::string normalized = value;
  for (char& ch : normalized) {
    if (ch == ',' || ch == '(' || ch == ')' || ch == '\t') ch = ' ';
  }
  std::istringstream in(normalized);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

double to_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + s + "' as a number");
  }
}

long long to_integer(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + s + "' as an integer");
  }
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("key '" + key + "': cannot parse '" + s + "' as a boolean");
}

template <typename T, typename Conv>
std::array<T, 3> triple(const std::string& key, const std::string& value, Conv conv) {
  auto parts = split_values(value);
  if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
  if (parts.size() != 3) throw ConfigError("key '" + key + "' expects one or three values");
  return {static_cast<T>(conv(key, parts[0])), static_cast<T>(conv(key, parts[1])),
          static_cast<T>(conv(key, parts[2]))};
}

std::string single(const std::string& key, const std::string& value) {
  auto parts = split_values(value);
  if (parts.size() != 1) throw ConfigError("key '" + key + "' expects a single value");
  return parts[0];
}

using Setter = std::function<void(SimulationConfig&, const std::string&, const std::string&)>;

Setter real(double SimulationConfig::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.*field = to_double(k, single(k, v));
  };
}

Setter cost(double CostModel::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.cost.*field = to_double(k, single(k, v));
  };
}

Setter integer(int SimulationConfig::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.*field = static_cast<int>(to_integer(k, single(k, v)));
  };
}

Setter boolean(bool SimulationConfig::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.*field = to_bool(k, single(k, v));
  };
}

Setter int_triple(Int3 SimulationConfig::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.*field = triple<int>(k, v, to_integer);
  };
}

Setter real_triple(Vec3 SimulationConfig::*field) {
  return [field](SimulationConfig& c, const std::string& k, const std::string& v) {
    c.*field = triple<double>(k, v, to_double);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["n_cell"] = int_triple(&SimulationConfig::n_cell);
    t["prob_lo"] = real_triple(&SimulationConfig::prob_lo);
    t["prob_hi"] = real_triple(&SimulationConfig::prob_hi);
    t["periodic"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      auto b = triple<int>(k, v, [](const std::string& kk, const std::string& s) {
        return to_bool(kk, s) ? 1 : 0;
      });
      c.periodic = {b[0] != 0, b[1] != 0, b[2] != 0};
    };
    t["guard"] = integer(&SimulationConfig::guard);
    t["tile_shape"] = int_triple(&SimulationConfig::tile_shape);
    t["order"] = integer(&SimulationConfig::order);
    t["ppc"] = integer(&SimulationConfig::ppc);
    t["u_th"] = real(&SimulationConfig::u_th);
    t["drift"] = real_triple(&SimulationConfig::drift);
    t["q"] = real(&SimulationConfig::q);
    t["m"] = real(&SimulationConfig::m);
    t["density"] = real(&SimulationConfig::density);
    t["dt_safety"] = real(&SimulationConfig::dt_safety);
    t["steps"] = integer(&SimulationConfig::steps);
    t["warmup"] = integer(&SimulationConfig::warmup);
    t["seed"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      c.seed = static_cast<std::uint64_t>(to_integer(k, single(k, v)));
    };
    t["ranks"] = int_triple(&SimulationConfig::ranks);
    t["variant"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      auto parts = split_values(v);
      if (parts.size() == 1) {
        // Accept "G7/D3/C2".
        std::string s = parts[0];
        for (char& ch : s) {
          if (ch == '/') ch = ' ';
        }
        parts = split_values(s);
      }
      if (parts.size() != 3) throw ConfigError("key '" + k + "' expects interp, deposit and comm labels");
      c.variant.interp_supply = parse_interp(parts[0]);
      c.variant.deposit_mode = parse_deposit(parts[1]);
      c.variant.comm = parse_comm(parts[2]);
    };
    t["interp"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      c.variant.interp_supply = parse_interp(single(k, v));
    };
    t["deposit"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      c.variant.deposit_mode = parse_deposit(single(k, v));
    };
    t["comm"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      c.variant.comm = parse_comm(single(k, v));
    };
    t["deterministic"] = boolean(&SimulationConfig::deterministic);
    t["virtual_time"] = boolean(&SimulationConfig::virtual_time);
    t["workload"] = [](SimulationConfig& c, const std::string& k, const std::string& v) {
      const auto s = single(k, v);
      if (s == "uniform") {
        c.workload = Workload::UniformPlasma;
      } else if (s == "slab") {
        c.workload = Workload::MigrationSlab;
      } else {
        throw ConfigError("key 'workload' expects 'uniform' or 'slab', got '" + s + "'");
      }
    };
    t["disorder_fraction"] = real(&SimulationConfig::disorder_fraction);
    t["frequency_hz"] = real(&SimulationConfig::frequency_hz);
    t["p_theoretical"] = real(&SimulationConfig::p_theoretical);
    t["latency_base"] = cost(&CostModel::latency_base);
    t["bandwidth"] = cost(&CostModel::bandwidth);
    t["progression_penalty"] = cost(&CostModel::progression_penalty);
    t["contention"] = cost(&CostModel::contention);
    t["vt_prep"] = cost(&CostModel::vt_prep);
    t["vt_kernel_scalar"] = cost(&CostModel::vt_kernel_scalar);
    t["vt_kernel_batched"] = cost(&CostModel::vt_kernel_batched);
    t["vt_sort"] = cost(&CostModel::vt_sort);
    t["vt_reduce"] = cost(&CostModel::vt_reduce);
    t["vt_interp_fixed"] = cost(&CostModel::vt_interp_fixed);
    t["vt_deposit_fixed"] = cost(&CostModel::vt_deposit_fixed);
    t["vt_scan"] = cost(&CostModel::vt_scan);
    t["vt_pack"] = cost(&CostModel::vt_pack);
    t["vt_unpack"] = cost(&CostModel::vt_unpack);
    t["vt_issue"] = cost(&CostModel::vt_issue);
    t["vt_issue_message"] = cost(&CostModel::vt_issue_message);
    t["vt_field"] = cost(&CostModel::vt_field);
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

GridGeometry build_geometry(const SimulationConfig& config) {
  GridGeometry g;
  g.n_cell = config.n_cell;
  g.prob_lo = config.prob_lo;
  g.prob_hi = config.prob_hi;
  g.periodic = config.periodic;
  g.guard = config.guard;
  g.tile_shape = config.tile_shape;

  const int need = required_guard(config.order);
  if (config.guard < need) {
    throw ConfigError("guard depth " + std::to_string(config.guard) + " is below the " +
                      std::to_string(need) + " required by shape order " + std::to_string(config.order));
  }
  for (int a = 0; a < 3; ++a) {
    const std::string ax = axis_name(a);
    if (config.n_cell[a] <= 0) throw ConfigError("n_cell must be positive on axis " + ax);
    if (!(config.prob_hi[a] > config.prob_lo[a])) {
      throw ConfigError("prob_hi must exceed prob_lo on axis " + ax);
    }
    if (!config.periodic[a]) {
      throw ConfigError("only periodic boundaries are supported (axis " + ax + ")");
    }
    if (config.tile_shape[a] <= 0 || config.n_cell[a] % config.tile_shape[a] != 0) {
      throw ConfigError("n_cell is not divisible by tile_shape on axis " + ax);
    }
    const int tiles = config.n_cell[a] / config.tile_shape[a];
    if (config.ranks[a] <= 0 || tiles % config.ranks[a] != 0) {
      throw ConfigError("ranks do not divide the tile count on axis " + ax);
    }
    g.dx[a] = (config.prob_hi[a] - config.prob_lo[a]) / config.n_cell[a];
  }
  return g;
}

void apply_config_value(SimulationConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second(config, key, value);
}

SimulationConfig parse_config(const std::string& text) {
  SimulationConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

SimulationConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string format_config(const SimulationConfig& c) {
  std::ostringstream out;
  out.precision(17);
  auto t3 = [&](const auto& v) {
    std::ostringstream s;
    s.precision(17);
    s << v[0] << ' ' << v[1] << ' ' << v[2];
    return s.str();
  };
  out << "n_cell = " << t3(c.n_cell) << '\n'
      << "prob_lo = " << t3(c.prob_lo) << '\n'
      << "prob_hi = " << t3(c.prob_hi) << '\n'
      << "periodic = " << c.periodic[0] << ' ' << c.periodic[1] << ' ' << c.periodic[2] << '\n'
      << "guard = " << c.guard << '\n'
      << "tile_shape = " << t3(c.tile_shape) << '\n'
      << "order = " << c.order << '\n'
      << "ppc = " << c.ppc << '\n'
      << "u_th = " << c.u_th << '\n'
      << "drift = " << t3(c.drift) << '\n'
      << "q = " << c.q << '\n'
      << "m = " << c.m << '\n'
      << "density = " << c.density << '\n'
      << "dt_safety = " << c.dt_safety << '\n'
      << "steps = " << c.steps << '\n'
      << "warmup = " << c.warmup << '\n'
      << "seed = " << c.seed << '\n'
      << "ranks = " << t3(c.ranks) << '\n'
      << "variant = " << to_string(c.variant.interp_supply) << ' ' << to_string(c.variant.deposit_mode) << ' '
      << comm_label(c.variant.comm) << '\n'
      << "deterministic = " << c.deterministic << '\n'
      << "virtual_time = " << c.virtual_time << '\n'
      << "workload = " << (c.workload == Workload::UniformPlasma ? "uniform" : "slab") << '\n'
      << "disorder_fraction = " << c.disorder_fraction << '\n'
      << "latency_base = " << c.cost.latency_base << '\n'
      << "bandwidth = " << c.cost.bandwidth << '\n'
      << "progression_penalty = " << c.cost.progression_penalty << '\n'
      << "contention = " << c.cost.contention << '\n';
  return out.str();
}

}  // namespace sowpic
