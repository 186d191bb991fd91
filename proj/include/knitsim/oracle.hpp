#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "knitsim/tree.hpp"

// Reference computations that read the channels directly. Protocols never
// call these; tests, acceptance checks and reporting do.

namespace knitsim {

// M_p = Φ_p†(O_p) at leaves, Φ_p†(⊗_children M_c) above.
inline std::map<Path, Mat> effective_observables(const TreeCircuit& tree) {
  const TreeShape& shape = tree.shape();
  std::map<Path, Mat> m;
  for (int l = shape.L(); l >= 1; --l) {
    for (const Path& p : shape.at_depth(l)) {
      Mat input;
      if (shape.is_leaf(p)) {
        input = tree.observable(p).matrix();
      } else {
        std::vector<Mat> factors;
        for (const Path& c : shape.children(p)) factors.push_back(m.at(c));
        input = kron_all(factors);
      }
      m[p] = hermitian_part(adjoint_apply(tree.channel(p), input));
    }
  }
  return m;
}

// tr(O ρ_tree) in the Heisenberg picture.
inline double exact_expectation(const TreeCircuit& tree) {
  const auto m = effective_observables(tree);
  std::vector<Mat> factors;
  for (const Path& p : tree.shape().children(Path{})) factors.push_back(m.at(p));
  return (kron_all(factors) * tree.root_state().matrix()).trace().real();
}

// tr(O ρ_tree) by pushing ρ through every channel.
inline double schrodinger_expectation(const TreeCircuit& tree) {
  const TreeShape& shape = tree.shape();
  std::vector<Path> wires = shape.children(Path{});
  std::vector<std::size_t> dims;
  for (const Path& p : wires) dims.push_back(static_cast<std::size_t>(shape.in_dim(p)));
  std::vector<bool> done(wires.size(), false);
  Mat state = tree.root_state().matrix();
  std::size_t i = 0;
  while (i < wires.size()) {
    if (done[i]) {
      ++i;
      continue;
    }
    const Path p = wires[i];
    state = apply_on_subsystem(tree.channel(p), state, dims, i);
    if (shape.is_leaf(p)) {
      dims[i] = static_cast<std::size_t>(shape.leaf_out_dim(p));
      done[i] = true;
      continue;
    }
    const std::vector<Path>& kids = shape.children(p);
    wires.erase(wires.begin() + static_cast<std::ptrdiff_t>(i));
    dims.erase(dims.begin() + static_cast<std::ptrdiff_t>(i));
    done.erase(done.begin() + static_cast<std::ptrdiff_t>(i));
    for (std::size_t k = kids.size(); k-- > 0;) {
      wires.insert(wires.begin() + static_cast<std::ptrdiff_t>(i), kids[k]);
      dims.insert(dims.begin() + static_cast<std::ptrdiff_t>(i), static_cast<std::size_t>(shape.in_dim(kids[k])));
      done.insert(done.begin() + static_cast<std::ptrdiff_t>(i), false);
    }
  }
  std::vector<Mat> obs;
  for (const Path& p : wires) obs.push_back(tree.observable(p).matrix());
  return (kron_all(obs) * state).trace().real();
}

// ‖M̃_p − M_p‖∞ per node.
inline std::map<Path, double> node_deviations(const TreeCircuit& tree, const TreeRun& run) {
  const auto m = effective_observables(tree);
  std::map<Path, double> dev;
  for (const auto& [p, mt] : run.learned) dev[p] = op_norm(mt.matrix() - m.at(p));
  return dev;
}

// ‖M̃_p − Φ_p†(input_p)‖∞ per node: the error of each tomography step alone.
inline std::map<Path, double> local_errors(const TreeCircuit& tree, const TreeRun& run) {
  std::map<Path, double> err;
  for (const auto& [p, mt] : run.learned)
    err[p] = op_norm(mt.matrix() - adjoint_apply(tree.channel(p), run.inputs.at(p).matrix()));
  return err;
}

// x_l = max over depth-l nodes of ‖M̃ − M‖∞, for l = 1..L.
inline std::vector<double> depth_deviations(const TreeShape& shape, const std::map<Path, double>& dev) {
  std::vector<double> x(static_cast<std::size_t>(shape.L()), 0.0);
  for (const auto& [p, v] : dev) x[p.size() - 1] = std::max(x[p.size() - 1], v);
  return x;
}

// Every tomography step met its planned accuracy.
inline bool good_tomography(const ShotPlan& plan, const std::map<Path, double>& local) {
  for (const auto& [p, e] : local)
    if (e > plan.nodes.at(p).accuracy) return false;
  return true;
}

// x_l ≤ ε_l + 2R x_{l+1} (trees) or x_l ≤ ε_l + x_{l+1} (chains), x_{L+1} = 0.
inline bool error_recursion_holds(const ShotPlan& plan, const std::vector<double>& x, double slack = 1e-12) {
  const double factor = plan.scheme == AllocationScheme::chain ? 1.0 : 2.0 * plan.R;
  for (std::size_t l = 0; l < x.size(); ++l) {
    const double next = l + 1 < x.size() ? x[l + 1] : 0.0;
    if (x[l] > plan.per_depth_accuracy[l] + factor * next + slack) return false;
  }
  return true;
}

}  // namespace knitsim
