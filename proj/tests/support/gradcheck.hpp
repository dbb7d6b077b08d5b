#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "procap/autograd.hpp"

namespace procap::testing {

struct GradCheckRow {
  std::string name;
  double max_abs_diff = 0;
  double scale = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0;
  std::string worst_name;
};

// Central differences for every scalar of every trainable parameter. `loss` must
// rebuild the graph from the current parameter values and return the scalar loss;
// `analytic` must leave gradients in Parameter::grad. Relative error is taken per
// tensor as max|a - n| / max(max|a|, max|n|, floor); the floor sits above the
// roundoff of a difference quotient so exactly-zero gradients do not read as errors.
inline GradCheckReport gradient_check(ag::ParameterStore<double>& store,
                                      const std::function<double()>& loss,
                                      const std::function<void()>& analytic, double h = 1e-5,
                                      double floor = 1e-5) {
  store.zero_grad();
  analytic();
  GradCheckReport rep;
  for (auto* p : store.all()) {
    if (!p->trainable) continue;
    GradCheckRow row;
    row.name = p->name;
    double amax = 0, nmax = 0;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double num = (up - down) / (2 * h);
      const double ana = p->grad.data()[i];
      amax = std::max(amax, std::abs(ana));
      nmax = std::max(nmax, std::abs(num));
      row.max_abs_diff = std::max(row.max_abs_diff, std::abs(ana - num));
    }
    row.scale = std::max({amax, nmax, floor});
    row.rel_error = row.max_abs_diff / row.scale;
    if (row.rel_error > rep.worst) {
      rep.worst = row.rel_error;
      rep.worst_name = row.name;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace procap::testing
