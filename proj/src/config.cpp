#include "fluidnet/config.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace fluidnet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& what) { throw ConfigError(field + ": " + what); }

void allow_only(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) fail(where.empty() ? key : where + "." + key, "unknown field");
  }
}

const json& object_at(const json& parent, const char* key, const std::string& name) {
  const json& v = parent.at(key);
  if (!v.is_object()) fail(name, "expected an object");
  return v;
}

double number(const json& obj, const char* key, const std::string& name) {
  if (!obj.contains(key)) fail(name, "required field is missing");
  const json& v = obj.at(key);
  if (!v.is_number()) fail(name, "expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const char* key, const std::string& name, double fallback) {
  return obj.contains(key) ? number(obj, key, name) : fallback;
}

int integer_or(const json& obj, const char* key, const std::string& name, int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail(name, "expected an integer");
  return v.get<int>();
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) fail(field, what);
}

Vector2d pair(const json& obj, const char* key, const std::string& name) {
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    fail(name, "expected an array of two numbers");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

InflowChain<double> parse_chain(const json& v, const std::string& name) {
  if (!v.is_object()) fail(name, "expected an object");
  allow_only(v, name, {"a_plus", "lambda", "mu"});
  InflowChain<double> c{number(v, "a_plus", name + ".a_plus"), number(v, "lambda", name + ".lambda"),
                        number(v, "mu", name + ".mu")};
  require(c.a_plus > 0, name + ".a_plus", "must be > 0");
  require(c.lambda > 0, name + ".lambda", "must be > 0");
  require(c.mu > 0, name + ".mu", "must be > 0");
  return c;
}

std::vector<double> parse_axis(const json& sweep, const char* key, const std::string& name) {
  if (!sweep.contains(key)) fail(name, "required field is missing");
  const json& v = sweep.at(key);
  if (v.is_array()) {
    std::vector<double> out;
    for (const json& x : v) {
      if (!x.is_number()) fail(name, "expected numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  if (!v.is_object()) fail(name, "expected {from, to, step} or an array");
  allow_only(v, name, {"from", "to", "step"});
  const double step = number(v, "step", name + ".step");
  require(step > 0, name + ".step", "must be > 0");
  return grid_range(number(v, "from", name + ".from"), number(v, "to", name + ".to"), step);
}

RunConfig from_json(const json& root) {
  if (!root.is_object()) fail("(root)", "expected a JSON object");
  allow_only(root, "",
             {"schema", "topology", "chains", "F1", "F2", "R3", "phi1", "diverge", "a_bar", "horizon", "seed",
              "max_step", "eps_q", "sample_interval", "initial_state", "constant_inflow", "estimate", "sweep", "drift",
              "merge_rule", "diverge_rule", "checkpoints"});

  if (!root.contains("schema")) fail("schema", "required field is missing");
  if (!root.at("schema").is_string() || root.at("schema").get<std::string>() != kConfigSchema) {
    fail("schema", "expected \"" + std::string(kConfigSchema) + "\"");
  }

  RunConfig rc;
  SimConfig& sim = rc.sim;
  NetworkParamsd& net = sim.network;

  const std::string topology = root.value("topology", std::string("merge"));
  if (topology == "merge") {
    net.topology = Topology::Merge;
  } else if (topology == "merge-diverge") {
    net.topology = Topology::MergeDiverge;
  } else {
    fail("topology", "expected \"merge\" or \"merge-diverge\"");
  }
  const bool network = net.topology == Topology::MergeDiverge;

  if (root.contains("chains")) {
    const json& chains = root.at("chains");
    if (!chains.is_array() || chains.size() != 2) fail("chains", "expected an array of two chains");
    sim.chains.links[0] = parse_chain(chains[0], "chains[0]");
    sim.chains.links[1] = parse_chain(chains[1], "chains[1]");
    rc.has_chains = true;
  }

  net.merge.F1 = number(root, "F1", "F1");
  net.merge.F2 = number(root, "F2", "F2");
  require(net.merge.F1 > 0, "F1", "must be > 0");
  require(net.merge.F2 > 0, "F2", "must be > 0");

  const double phi1 = number(root, "phi1", "phi1");
  require(phi1 >= 0 && phi1 <= 1, "phi1", "priority vector requires phi1, phi2 >= 0 and phi1 + phi2 = 1");
  net.merge.phi = PriorityVector<double>::from_phi1(phi1);

  if (root.contains("sweep")) {
    const json& s = object_at(root, "sweep", "sweep");
    allow_only(s, "sweep", {"F3", "phi1"});
    SweepGrid<double> grid;
    grid.F3 = parse_axis(s, "F3", "sweep.F3");
    grid.phi1 = parse_axis(s, "phi1", "sweep.phi1");
    try {
      grid.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    rc.sweep = grid;
  }

  if (network) {
    if (!root.contains("diverge")) fail("diverge", "required for merge-diverge");
    const json& d = object_at(root, "diverge", "diverge");
    allow_only(d, "diverge", {"F3", "theta", "R4", "R5"});
    net.diverge.theta = number(d, "theta", "diverge.theta");
    net.diverge.R4 = number(d, "R4", "diverge.R4");
    net.diverge.R5 = number(d, "R5", "diverge.R5");
    require(net.diverge.theta > 0, "diverge.theta", "must be > 0");
    require(net.diverge.R4 > 0, "diverge.R4", "must be > 0");
    require(net.diverge.R5 > 0, "diverge.R5", "must be > 0");
    rc.has_diverge_F3 = d.contains("F3");
    if (rc.has_diverge_F3) {
      net.diverge.F3 = number(d, "F3", "diverge.F3");
      require(net.diverge.F3 > 0, "diverge.F3", "must be > 0");
      require(net.diverge.standing_assumption(), "diverge.F3",
              "standing assumption R4 < F3, R5 < F3, F3 < R4 + R5 is violated");
    } else if (rc.sweep) {
      net.diverge.F3 = rc.sweep->F3.front();
    } else {
      fail("diverge.F3", "required field is missing");
    }
    net.merge.R3 = number_or(root, "R3", "R3", net.diverge.F3);
  } else {
    if (root.contains("diverge")) fail("diverge", "only valid for merge-diverge");
    net.merge.R3 = number(root, "R3", "R3");
  }
  require(net.merge.R3 > 0, "R3", "must be > 0");

  if (root.contains("merge_rule")) {
    const std::string r = root.at("merge_rule").get<std::string>();
    if (r == "priority") net.merge_rule = MergeRule::Priority;
    else if (r == "positive-part") net.merge_rule = MergeRule::PositivePart;
    else fail("merge_rule", "expected \"priority\" or \"positive-part\"");
  }
  if (root.contains("diverge_rule")) {
    const std::string r = root.at("diverge_rule").get<std::string>();
    if (r == "symmetric") net.diverge_rule = DivergeRule::Symmetric;
    else if (r == "as-printed") net.diverge_rule = DivergeRule::AsPrinted;
    else fail("diverge_rule", "expected \"symmetric\" or \"as-printed\"");
  }

  if (root.contains("a_bar")) {
    rc.a_bar = pair(root, "a_bar", "a_bar");
    require(rc.a_bar.minCoeff() >= 0, "a_bar", "must be >= 0");
  } else if (rc.has_chains) {
    rc.a_bar = sim.chains.mean_inflows();
  } else {
    fail("chains", "required unless a_bar is given");
  }

  sim.horizon = number_or(root, "horizon", "horizon", 0);
  require(sim.horizon >= 0, "horizon", "must be >= 0");
  if (root.contains("seed")) {
    const json& s = root.at("seed");
    if (!s.is_number_unsigned()) fail("seed", "expected a non-negative integer");
    sim.seed = s.get<std::uint64_t>();
  }
  sim.max_step = number_or(root, "max_step", "max_step", 1e-3);
  require(sim.max_step > 0, "max_step", "must be > 0");
  net.eps_q = number_or(root, "eps_q", "eps_q", kDefaultEpsQ);
  require(net.eps_q > 0, "eps_q", "must be > 0");
  sim.sample_interval = number_or(root, "sample_interval", "sample_interval", 0);
  require(sim.sample_interval >= 0, "sample_interval", "must be >= 0");
  sim.checkpoints = integer_or(root, "checkpoints", "checkpoints", 0);
  require(sim.checkpoints >= 0, "checkpoints", "must be >= 0");

  if (root.contains("initial_state")) {
    const json& s = object_at(root, "initial_state", "initial_state");
    allow_only(s, "initial_state", {"mode", "q"});
    if (s.contains("mode")) {
      try {
        sim.initial_mode = parse_mode(s.at("mode").get<std::string>());
      } catch (const std::exception&) {
        fail("initial_state.mode", "expected one of \"00\", \"10\", \"01\", \"11\"");
      }
    }
    if (s.contains("q")) {
      const json& q = s.at("q");
      if (!q.is_array() || (q.size() != 2 && q.size() != 4)) {
        fail("initial_state.q", "expected [q1, q2] or [q1, q2, q31, q32]");
      }
      for (std::size_t i = 0; i < q.size(); ++i) {
        if (!q[i].is_number()) fail("initial_state.q", "expected numbers");
        sim.initial_queues(static_cast<Eigen::Index>(i)) = q[i].get<double>();
      }
      require(sim.initial_queues.minCoeff() >= 0, "initial_state.q", "queues must be >= 0");
      if (network) {
        require(sim.initial_queues(2) + sim.initial_queues(3) <= net.diverge.theta, "initial_state.q",
                "q31 + q32 must not exceed diverge.theta");
      } else {
        require(sim.initial_queues(2) == 0 && sim.initial_queues(3) == 0, "initial_state.q",
                "link-3 queues must be zero in the merge topology");
      }
    }
  }

  if (root.contains("constant_inflow")) {
    sim.constant_inflow = pair(root, "constant_inflow", "constant_inflow");
    require(sim.constant_inflow->minCoeff() >= 0, "constant_inflow", "must be >= 0");
  }

  if (root.contains("estimate")) {
    const json& e = object_at(root, "estimate", "estimate");
    allow_only(e, "estimate", {"ensemble", "horizon", "slope_threshold_frac", "avg_tol", "checkpoints", "threads"});
    EstimateOptions& o = rc.estimate;
    o.ensemble = integer_or(e, "ensemble", "estimate.ensemble", o.ensemble);
    o.horizon = number_or(e, "horizon", "estimate.horizon", o.horizon);
    o.slope_threshold_frac = number_or(e, "slope_threshold_frac", "estimate.slope_threshold_frac",
                                       o.slope_threshold_frac);
    o.avg_tol = number_or(e, "avg_tol", "estimate.avg_tol", o.avg_tol);
    o.checkpoints = integer_or(e, "checkpoints", "estimate.checkpoints", o.checkpoints);
    const int threads = integer_or(e, "threads", "estimate.threads", 0);
    require(o.ensemble >= 1, "estimate.ensemble", "must be >= 1");
    require(o.horizon > 0, "estimate.horizon", "must be > 0");
    require(o.slope_threshold_frac > 0, "estimate.slope_threshold_frac", "must be > 0");
    require(o.avg_tol > 0, "estimate.avg_tol", "must be > 0");
    require(o.checkpoints >= 4, "estimate.checkpoints", "must be >= 4");
    require(threads >= 0, "estimate.threads", "must be >= 0");
    o.threads = static_cast<unsigned>(threads);
  }

  if (root.contains("drift")) {
    const json& d = object_at(root, "drift", "drift");
    allow_only(d, "drift", {"certificate", "box", "grid", "samples", "runs", "horizon", "interval", "scale"});
    DriftOptions& o = rc.drift;
    if (d.contains("certificate")) {
      const std::string c = d.at("certificate").get<std::string>();
      if (c == "auto") o.certificate = CertificateChoice::Auto;
      else if (c == "V1") o.certificate = CertificateChoice::V1;
      else if (c == "V2") o.certificate = CertificateChoice::V2;
      else fail("drift.certificate", "expected \"auto\", \"V1\" or \"V2\"");
    }
    if (d.contains("scale")) {
      const std::string s = d.at("scale").get<std::string>();
      if (s == "half") o.scale = QuadraticScale::Half;
      else if (s == "as-printed") o.scale = QuadraticScale::AsPrinted;
      else fail("drift.scale", "expected \"half\" or \"as-printed\"");
    }
    o.box = number_or(d, "box", "drift.box", o.box);
    o.grid = integer_or(d, "grid", "drift.grid", o.grid);
    o.samples = integer_or(d, "samples", "drift.samples", o.samples);
    o.runs = integer_or(d, "runs", "drift.runs", o.runs);
    o.horizon = number_or(d, "horizon", "drift.horizon", o.horizon);
    o.interval = number_or(d, "interval", "drift.interval", o.interval);
    require(o.box > 0, "drift.box", "must be > 0");
    require(o.grid >= 1, "drift.grid", "must be >= 1");
    require(o.samples >= 1, "drift.samples", "must be >= 1");
    require(o.runs >= 1, "drift.runs", "must be >= 1");
    require(o.horizon > 0, "drift.horizon", "must be > 0");
    require(o.interval > 0, "drift.interval", "must be > 0");
  }

  if (rc.sweep) {
    rc.sweep->a_bar = rc.a_bar;
    rc.sweep->merge = net.merge;
    rc.sweep->diverge = net.diverge;
    if (!network) fail("sweep", "requires topology \"merge-diverge\"");
  }
  return rc;
}

}  // namespace

RunConfig parse_config_text(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  try {
    return from_json(root);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema violation: ") + e.what());
  }
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace fluidnet
