#include "shjb/io.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "shjb/errors.hpp"

namespace shjb {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

MarkMeasure measure_from_json(const nlohmann::json& j) {
  require(j.is_array(), "measure must be an array of atoms");
  std::vector<MarkAtom> atoms;
  for (const auto& a : j) {
    require(a.contains("mark") && a.contains("weight"), "measure atom needs 'mark' and 'weight'");
    const auto mark = a.at("mark").get<std::vector<double>>();
    require(!mark.empty() && mark.size() <= static_cast<std::size_t>(kMaxDim), "measure atom mark has bad dimension");
    Vec e(static_cast<int>(mark.size()));
    for (std::size_t k = 0; k < mark.size(); ++k) e[static_cast<int>(k)] = mark[k];
    atoms.push_back({e, a.at("weight").get<double>()});
  }
  return MarkMeasure(std::move(atoms));
}

nlohmann::json measure_to_json(const MarkMeasure& m) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : m.atoms()) {
    std::vector<double> mark(a.mark.data(), a.mark.data() + a.mark.size());
    j.push_back({{"mark", mark}, {"weight", a.weight}});
  }
  return j;
}

namespace {

void write_vec(std::ostream& os, const Vec& v) {
  for (int k = 0; k < v.size(); ++k) os << ',' << format_double(v[k]);
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const StateTrajectory& tr) {
  const int n = tr.states.empty() ? 0 : static_cast<int>(tr.states.front().size());
  const int m = tr.controls.empty() ? 0 : static_cast<int>(tr.controls.front().size());
  os << "t,event";
  for (int k = 0; k < n; ++k) os << ",x" << k + 1;
  for (int k = 0; k < m; ++k) os << ",u" << k + 1;
  os << '\n';
  // Rows carry the control of the step they start.
  std::size_t step = 0;
  for (std::size_t r = 0; r < tr.states.size(); ++r) {
    while (step + 1 < tr.node_rows.size() && tr.node_rows[step + 1] <= r) ++step;
    os << format_double(tr.times[r]) << ',' << (tr.event[r] ? 1 : 0);
    write_vec(os, tr.states[r]);
    if (m > 0) {
      const std::size_t cs = std::min(step, tr.controls.size() - 1);
      write_vec(os, tr.controls[cs]);
    }
    os << '\n';
  }
}

void write_value_table_csv(std::ostream& os, const ValueTable& tab) {
  const int n = tab.centers.dim();
  os << "t";
  for (int k = 0; k < n; ++k) os << ",x" << k + 1;
  os << ",value,argmin\n";
  for (std::size_t i = 0; i < tab.values.size(); ++i) {
    for (std::size_t q = 0; q < tab.centers.size(); ++q) {
      os << format_double(tab.grid.node(i));
      write_vec(os, tab.centers.point(q));
      os << ',' << format_double(tab.values[i][static_cast<Eigen::Index>(q)]) << ','
         << (i < tab.argmin.size() ? tab.argmin[i][q] : -1) << '\n';
    }
  }
}

void write_bsde_csv(std::ostream& os, const BsdeSolution& sol) {
  const auto d = sol.nodes.empty() ? 0 : sol.nodes.front().z_mean.size();
  const auto J = sol.nodes.empty() ? 0 : sol.nodes.front().k_mean.size();
  os << "node,t,y_mean";
  for (Eigen::Index k = 0; k < d; ++k) os << ",z" << k + 1 << "_mean";
  for (Eigen::Index j = 0; j < J; ++j) os << ",k" << j + 1 << "_mean";
  os << ",basis_size,ridge_fallback,residual_rms\n";
  for (std::size_t i = 0; i < sol.nodes.size(); ++i) {
    const auto& nd = sol.nodes[i];
    os << i << ',' << format_double(sol.grid.node(i)) << ',' << format_double(nd.y_mean);
    for (Eigen::Index k = 0; k < nd.z_mean.size(); ++k) os << ',' << format_double(nd.z_mean[k]);
    for (Eigen::Index j = 0; j < nd.k_mean.size(); ++j) os << ',' << format_double(nd.k_mean[j]);
    os << ',' << nd.basis_size << ',' << (nd.ridge_fallback ? 1 : 0) << ',' << format_double(nd.residual_rms) << '\n';
  }
}

void write_bseej_csv(std::ostream& os, const BseejSolution& sol) {
  const auto nb = sol.y.empty() ? 0 : sol.y.front().front().size();
  os << "node,t,scenario,label,probability";
  for (Eigen::Index b = 0; b < nb; ++b) os << ",y" << b + 1;
  os << '\n';
  for (std::size_t i = 0; i < sol.y.size(); ++i) {
    const auto& pr = sol.scenarios.probabilities(i);
    for (std::size_t s = 0; s < sol.y[i].size(); ++s) {
      os << i << ',' << format_double(sol.grid.node(i)) << ',' << s << ',' << sol.scenarios.label(i, s) << ','
         << format_double(pr[s]);
      for (Eigen::Index b = 0; b < nb; ++b) os << ',' << format_double(sol.y[i][s][b]);
      os << '\n';
    }
  }
}

void write_triplet_csv(std::ostream& os, const RandomFieldTriplet& tr) {
  const int n = tr.grid.dim();
  os << "t,scenario";
  for (int k = 0; k < n; ++k) os << ",x" << k + 1;
  os << ",V,Phi_d";
  for (std::size_t j = 0; j < tr.atoms; ++j) os << ",Psi_" << j + 1;
  os << '\n';
  for (std::size_t i = 0; i < tr.nodes.size(); ++i) {
    for (std::size_t s = 0; s < tr.nodes[i].size(); ++s) {
      const FieldSlice& sl = tr.nodes[i][s];
      for (std::size_t q = 0; q < tr.grid.size(); ++q) {
        const auto e = static_cast<Eigen::Index>(q);
        os << format_double(tr.time.node(i)) << ',' << s;
        write_vec(os, tr.grid.point(q));
        os << ',' << format_double(sl.V[e]) << ',' << format_double(sl.Phi.size() ? sl.Phi[e] : 0.0);
        for (std::size_t j = 0; j < tr.atoms; ++j) os << ',' << format_double(sl.Psi.empty() ? 0.0 : sl.Psi[j][e]);
        os << '\n';
      }
    }
  }
}

RandomFieldTriplet read_triplet_csv(std::istream& is, int d) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "triplet CSV: missing header");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  int n = 0;
  std::size_t atoms = 0;
  for (const auto& c : cols) {
    if (c.size() > 1 && c[0] == 'x') ++n;
    if (c.rfind("Psi_", 0) == 0) ++atoms;
  }
  require(n >= 1 && cols.size() == static_cast<std::size_t>(2 + n + 2) + atoms, "triplet CSV: unexpected header");

  struct Row {
    double t;
    std::size_t s;
    Vec x;
    std::vector<double> vals;
  };
  std::vector<Row> rows;
  std::vector<std::set<double>> coords(static_cast<std::size_t>(n));
  std::set<double> times;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string c;
    std::vector<double> v;
    while (std::getline(ss, c, ',')) v.push_back(std::stod(c));
    require(v.size() == cols.size(), "triplet CSV: row has the wrong number of fields");
    Row r{v[0], static_cast<std::size_t>(v[1]), Vec(n), {}};
    for (int k = 0; k < n; ++k) {
      r.x[k] = v[static_cast<std::size_t>(2 + k)];
      coords[static_cast<std::size_t>(k)].insert(r.x[k]);
    }
    r.vals.assign(v.begin() + 2 + n, v.end());
    times.insert(r.t);
    rows.push_back(std::move(r));
  }
  Vec lo(n), hi(n);
  std::vector<int> counts;
  for (int k = 0; k < n; ++k) {
    lo[k] = *coords[static_cast<std::size_t>(k)].begin();
    hi[k] = *coords[static_cast<std::size_t>(k)].rbegin();
    counts.push_back(static_cast<int>(coords[static_cast<std::size_t>(k)].size()));
  }
  RandomFieldTriplet tr;
  tr.grid = TensorGrid(lo, hi, counts);
  tr.time = TimeGrid(std::vector<double>(times.begin(), times.end()));
  tr.d = d;
  tr.atoms = atoms;
  tr.nodes.resize(times.size());
  std::map<double, std::size_t> tindex;
  for (double t : times) tindex.emplace(t, tindex.size());
  bool phi_used = false, psi_used = false;
  const auto P = static_cast<Eigen::Index>(tr.grid.size());
  for (const auto& r : rows) {
    auto& slot = tr.nodes[tindex.at(r.t)];
    if (slot.size() <= r.s) slot.resize(r.s + 1, FieldSlice{Eigen::VectorXd::Zero(P), Eigen::VectorXd::Zero(P),
                                                            std::vector<Eigen::VectorXd>(atoms, Eigen::VectorXd::Zero(P))});
    const auto q = static_cast<Eigen::Index>(tr.grid.nearest(r.x));
    slot[r.s].V[q] = r.vals[0];
    slot[r.s].Phi[q] = r.vals[1];
    phi_used = phi_used || r.vals[1] != 0.0;
    for (std::size_t j = 0; j < atoms; ++j) {
      slot[r.s].Psi[j][q] = r.vals[2 + j];
      psi_used = psi_used || r.vals[2 + j] != 0.0;
    }
  }
  for (auto& node : tr.nodes) {
    for (auto& sl : node) {
      if (!phi_used) sl.Phi.resize(0);
      if (!psi_used) sl.Psi.clear();
    }
  }
  return tr;
}

}  // namespace shjb
