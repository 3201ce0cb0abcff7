// Python bindings: configuration, the multi-rank simulation, the reference
// comparison and the metric formulas.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sowpic/metrics.hpp"
#include "sowpic/oracle.hpp"
#include "sowpic/pipeline.hpp"

namespace py = pybind11;
using namespace sowpic;

namespace {

const char* const kComponents[9] = {"ex", "ey", "ez", "bx", "by", "bz", "jx", "jy", "jz"};

std::string as_text(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "on" : "off";
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
    std::string out;
    for (const auto& item : v) {
      if (!out.empty()) out += ",";
      out += py::str(item).cast<std::string>();
    }
    return out;
  }
  if (py::isinstance<py::float_>(v)) return py::repr(v).cast<std::string>();
  return py::str(v).cast<std::string>();
}

SimulationConfig make_config(const py::dict& kw) {
  SimulationConfig c;
  for (const auto& [k, v] : kw) apply_config_value(c, k.cast<std::string>(), as_text(v));
  validate_variant(c.variant);
  build_geometry(c);
  return c;
}

py::dict metrics_dict(const metrics::StepMetrics& m) {
  py::dict d;
  d["step"] = m.step;
  d["t_interpolation"] = m.t_interpolation;
  d["t_deposit"] = m.t_deposit;
  d["t_redistribute"] = m.t_redistribute;
  d["t_prep"] = m.t_prep;
  d["t_sort"] = m.t_sort;
  d["t_kernel"] = m.t_kernel;
  d["t_reduce"] = m.t_reduce;
  d["t_pack"] = m.t_pack;
  d["t_issue"] = m.t_issue;
  d["t_wait"] = m.t_wait;
  d["t_post_process"] = m.t_post_process;
  d["t_wait_max"] = m.t_wait_max;
  d["t_field"] = m.t_field;
  d["n_particles"] = m.n_particles;
  d["n_local_migrants"] = m.n_local_migrants;
  d["n_remote_migrants"] = m.n_remote_migrants;
  d["n_tail"] = m.n_tail;
  d["layout_work"] = m.layout_work;
  d["flops_interp"] = m.flops_interp;
  d["flops_deposit"] = m.flops_deposit;
  return d;
}

py::dict diagnostics_dict(const metrics::Diagnostics& d) {
  py::dict out;
  out["charge"] = d.charge;
  out["momentum"] = py::make_tuple(d.momentum[0], d.momentum[1], d.momentum[2]);
  out["kinetic"] = d.kinetic;
  out["field"] = d.field;
  out["energy"] = d.energy();
  out["count"] = d.count;
  return out;
}

// Particles cross the boundary as a dict of equal-length 1-D arrays.
py::dict particles_to_numpy(const std::vector<ParticleRecord>& ps) {
  const auto n = static_cast<py::ssize_t>(ps.size());
  py::array_t<std::uint64_t> id(n);
  py::array_t<double> cols[7] = {py::array_t<double>(n), py::array_t<double>(n), py::array_t<double>(n),
                                 py::array_t<double>(n), py::array_t<double>(n), py::array_t<double>(n),
                                 py::array_t<double>(n)};
  auto idv = id.mutable_unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& p = ps[static_cast<std::size_t>(i)];
    idv(i) = p.id;
    const double v[7] = {p.x, p.y, p.z, p.ux, p.uy, p.uz, p.w};
    for (int c = 0; c < 7; ++c) cols[c].mutable_at(i) = v[c];
  }
  py::dict d;
  d["id"] = id;
  const char* names[7] = {"x", "y", "z", "ux", "uy", "uz", "w"};
  for (int c = 0; c < 7; ++c) d[names[c]] = cols[c];
  return d;
}

std::vector<ParticleRecord> particles_from_numpy(const py::dict& d) {
  auto id = d["id"].cast<py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>>();
  const char* names[7] = {"x", "y", "z", "ux", "uy", "uz", "w"};
  std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>> cols;
  for (const char* n : names) {
    cols.push_back(d[n].cast<py::array_t<double, py::array::c_style | py::array::forcecast>>());
    if (cols.back().size() != id.size()) throw ConfigError(std::string("particle column '") + n + "' has the wrong length");
  }
  std::vector<ParticleRecord> ps(static_cast<std::size_t>(id.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    p.id = id.at(static_cast<py::ssize_t>(i));
    double* v[7] = {&p.x, &p.y, &p.z, &p.ux, &p.uy, &p.uz, &p.w};
    for (int c = 0; c < 7; ++c) *v[c] = cols[static_cast<std::size_t>(c)].at(static_cast<py::ssize_t>(i));
  }
  return ps;
}

// Interior nodes only, indexed [i, j, k].
py::dict fields_to_numpy(const FieldSet& f) {
  const Int3 n = f.interior();
  py::dict d;
  for (int c = 0; c < 9; ++c) {
    const NodeArray& a = f[static_cast<Component>(c)];
    py::array_t<double> out({n[0], n[1], n[2]});
    auto v = out.mutable_unchecked<3>();
    for (int i = 0; i < n[0]; ++i)
      for (int j = 0; j < n[1]; ++j)
        for (int k = 0; k < n[2]; ++k) v(i, j, k) = a(i, j, k);
    d[kComponents[c]] = out;
  }
  return d;
}

FieldSet fields_from_numpy(const py::dict& d, const Int3& n) {
  FieldSet f = allocate_fields(n, 0);
  for (int c = 0; c < 9; ++c) {
    if (!d.contains(kComponents[c])) continue;  // missing components stay zero
    auto arr = d[kComponents[c]].cast<py::array_t<double, py::array::c_style | py::array::forcecast>>();
    if (arr.ndim() != 3 || arr.shape(0) != n[0] || arr.shape(1) != n[1] || arr.shape(2) != n[2])
      throw ConfigError(std::string("field '") + kComponents[c] + "' does not match the grid shape");
    auto v = arr.unchecked<3>();
    NodeArray& a = f[static_cast<Component>(c)];
    for (int i = 0; i < n[0]; ++i)
      for (int j = 0; j < n[1]; ++j)
        for (int k = 0; k < n[2]; ++k) a(i, j, k) = v(i, j, k);
  }
  return f;
}

py::dict compare_dict(const oracle::CompareReport& r) {
  py::dict d;
  d["pass"] = r.pass;
  d["particle_max_error"] = r.particle_max_error;
  d["worst_particle"] = r.worst_particle;
  d["field_max_error"] = r.field_max_error;
  py::dict per;
  for (int c = 0; c < 9; ++c) per[kComponents[c]] = r.field_error[static_cast<std::size_t>(c)];
  d["field_error"] = per;
  d["tolerance"] = r.tolerance;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sowpic, m) {
  m.doc() = "Particle-in-cell engine with sort-on-write layouts and overlapped migration";

  // Later registrations are tried first, so the base class goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MetricError>(m, "MetricError", base.ptr());
  py::register_exception<ComparisonError>(m, "ComparisonError", base.ptr());

  py::class_<SimulationConfig>(m, "Config")
      .def(py::init([](const py::kwargs& kw) { return make_config(kw); }),
           "Build a configuration; keyword names and values follow the config-file keys.")
      .def_static("parse", &parse_config, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("set", [](SimulationConfig& c, const std::string& key, const py::object& v) {
             apply_config_value(c, key, as_text(v));
             return &c;
           }, py::return_value_policy::reference_internal)
      .def("text", &format_config)
      .def_property_readonly("variant", [](const SimulationConfig& c) { return to_string(c.variant); })
      .def_property_readonly("n_cell", [](const SimulationConfig& c) { return c.n_cell; })
      .def_property_readonly("ranks", [](const SimulationConfig& c) { return c.ranks; })
      .def_property_readonly("order", [](const SimulationConfig& c) { return c.order; })
      .def_property_readonly("ppc", [](const SimulationConfig& c) { return c.ppc; })
      .def_property_readonly("steps", [](const SimulationConfig& c) { return c.steps; })
      .def("__repr__", [](const SimulationConfig& c) { return "<Config " + to_string(c.variant) + ">"; });

  py::class_<pipeline::Simulation>(m, "Simulation")
      .def(py::init<const SimulationConfig&>(), py::arg("config"))
      .def(py::init([](const SimulationConfig& c, const py::dict& particles) {
             return std::make_unique<pipeline::Simulation>(c, particles_from_numpy(particles));
           }),
           py::arg("config"), py::arg("particles"))
      .def("step", [](pipeline::Simulation& s) {
             metrics::StepMetrics r;
             {
               py::gil_scoped_release nogil;
               r = s.step();
             }
             return metrics_dict(r);
           })
      .def("run", [](pipeline::Simulation& s, bool record) {
             pipeline::RunReport r;
             {
               py::gil_scoped_release nogil;
               r = s.run(record);
             }
             py::dict d;
             py::list steps, diag;
             for (const auto& m : r.steps) steps.append(metrics_dict(m));
             for (const auto& x : r.diagnostics) diag.append(diagnostics_dict(x));
             d["steps"] = steps;
             d["diagnostics"] = diag;
             d["t_steps"] = r.t_steps;
             d["pps"] = r.throughput.pps;
             d["cpp"] = r.throughput.cpp;
             d["checksum"] = r.checksum;
             if (record) {
               const auto rep = metrics::conservation_report(r.diagnostics);
               d["max_energy_error"] = rep.max_energy_error();
               d["charge_error"] = rep.charge_error;
               d["count_change"] = rep.count_change;
             }
             return d;
           }, py::arg("record_diagnostics") = false)
      .def("step_with_audit", [](pipeline::Simulation& s) {
             std::vector<std::uint64_t> ids;
             for (const auto& p : s.particles()) ids.push_back(p.id);
             const auto before = pipeline::cell_map(s);
             const auto m = s.step();
             const auto rep = pipeline::audit(s, ids, &before);
             py::dict d = metrics_dict(m);
             d["violations"] = rep.violations;
             d["messages"] = rep.messages;
             return d;
           }, "Advance one step and audit the tile layout against the pre-step cells.")
      .def("particles", [](const pipeline::Simulation& s) { return particles_to_numpy(s.particles()); })
      .def("fields", [](const pipeline::Simulation& s) { return fields_to_numpy(s.gather_fields()); })
      .def("set_fields", [](pipeline::Simulation& s, const py::dict& d) {
             s.set_fields(fields_from_numpy(d, s.geometry().n_cell));
           })
      .def("set_freeze_motion", &pipeline::Simulation::set_freeze_motion, py::arg("on"))
      .def("diagnostics", [](const pipeline::Simulation& s) { return diagnostics_dict(s.diagnostics()); })
      .def("checksum", &pipeline::Simulation::checksum)
      .def("tail_length", [](const pipeline::Simulation& s) {
             std::int64_t n = 0;
             for (int r = 0; r < s.rank_count(); ++r)
               for (const auto& t : s.rank(r).tiles)
                 n += static_cast<std::int64_t>(t.current().capacity() - t.current().ptr_dis);
             return n;
           })
      .def_property_readonly("dt", &pipeline::Simulation::dt)
      .def_property_readonly("steps_taken", &pipeline::Simulation::steps_taken)
      .def_property_readonly("rank_count", &pipeline::Simulation::rank_count);

  m.def("compare_to_reference", [](const SimulationConfig& c, int steps, double tolerance) {
          pipeline::Simulation sim(c);
          oracle::OracleState ref = oracle::make_state(c, sim.particles());
          {
            py::gil_scoped_release nogil;
            for (int s = 0; s < steps; ++s) {
              sim.step();
              oracle::reference_step(ref);
            }
          }
          return compare_dict(oracle::compare_states(sim.particles(), sim.gather_fields(), ref.particles, ref.fields,
                                                     sim.geometry(), tolerance));
        },
        py::arg("config"), py::arg("steps"), py::arg("tolerance"),
        "Run the configured variant and the unsorted scalar reference side by side and compare.");

  m.def("shape_weights", [](double xi, int order) {
          const auto w = shape::shape_weights(xi, order);
          return std::vector<double>(w.begin(), w.begin() + order + 1);
        },
        py::arg("xi"), py::arg("order"));

  m.def("pps_cpp", [](double n, double t, double f) {
          const auto r = metrics::pps_cpp(n, t, f);
          return py::make_tuple(r.pps, r.cpp);
        },
        py::arg("n_particles"), py::arg("t_steps"), py::arg("frequency_hz") = 1.3e9);
  m.def("overlap_ratio", &metrics::overlap_ratio, py::arg("base_issue"), py::arg("base_wait"), py::arg("over_issue"),
        py::arg("over_wait"));
  m.def("peak_efficiency", &metrics::peak_efficiency, py::arg("n_particles"), py::arg("t_steps"),
        py::arg("p_theoretical"), py::arg("flops_interp") = metrics::kFlopsInterp,
        py::arg("flops_deposit") = metrics::kFlopsDeposit);
  m.def("fom_node", &metrics::fom_node, py::arg("n_cells"), py::arg("n_particles"), py::arg("t_steps"),
        py::arg("n_nodes"), py::arg("alpha") = metrics::kFomAlpha, py::arg("beta") = metrics::kFomBeta);
  m.def("metrics_csv", [](const py::list& rows, double f) {
          std::vector<metrics::StepMetrics> v;
          for (const auto& r : rows) {
            const auto d = r.cast<py::dict>();
            metrics::StepMetrics m;
            m.step = d["step"].cast<std::int64_t>();
            m.t_interpolation = d["t_interpolation"].cast<double>();
            m.t_deposit = d["t_deposit"].cast<double>();
            m.t_redistribute = d["t_redistribute"].cast<double>();
            m.t_prep = d["t_prep"].cast<double>();
            m.t_sort = d["t_sort"].cast<double>();
            m.t_kernel = d["t_kernel"].cast<double>();
            m.t_reduce = d["t_reduce"].cast<double>();
            m.t_pack = d["t_pack"].cast<double>();
            m.t_issue = d["t_issue"].cast<double>();
            m.t_wait = d["t_wait"].cast<double>();
            m.t_post_process = d["t_post_process"].cast<double>();
            m.t_wait_max = d["t_wait_max"].cast<double>();
            m.t_field = d["t_field"].cast<double>();
            m.n_particles = d["n_particles"].cast<std::int64_t>();
            m.n_local_migrants = d["n_local_migrants"].cast<std::int64_t>();
            m.n_remote_migrants = d["n_remote_migrants"].cast<std::int64_t>();
            m.n_tail = d["n_tail"].cast<std::int64_t>();
            m.layout_work = d["layout_work"].cast<std::int64_t>();
            m.flops_interp = d["flops_interp"].cast<double>();
            m.flops_deposit = d["flops_deposit"].cast<double>();
            v.push_back(m);
          }
          std::ostringstream out;
          metrics::write_csv(out, v, f);
          return out.str();
        },
        py::arg("steps"), py::arg("frequency_hz") = 1.3e9);
}
