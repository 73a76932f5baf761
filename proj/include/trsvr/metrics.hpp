#pragma once

// Persistence for traces and verification reports: the per-iteration metrics
// CSV, line-oriented check reports, and two-column series files for external
// plotting. Floats print with 17 significant digits so values round-trip
// bit-exactly through text.

#include <cmath>
#include <ostream>
#include <string>

#include "trsvr/core.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/theory.hpp"

namespace trsvr {

inline constexpr const char* kMetricsHeader =
    "k,s,f,grad_norm,vr_grad_norm,radius,step_norm,model_dec,actual_dec,evals";

inline void write_metrics_csv(std::ostream& out, const Trace& trace) {
  out << kMetricsHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.k << ',' << r.s << ',' << format_g17(r.f) << ','
        << format_g17(r.grad_norm) << ',' << format_g17(r.vr_grad_norm) << ','
        << format_g17(r.radius) << ',' << format_g17(r.step_norm) << ','
        << format_g17(r.model_decrease) << ',' << format_g17(r.actual_decrease)
        << ',' << r.evals << '\n';
  }
}

inline const char* check_status_name(CheckStatus status) {
  switch (status) {
    case CheckStatus::pass:
      return "PASS";
    case CheckStatus::fail:
      return "FAIL";
    case CheckStatus::skip:
      return "SKIP";
  }
  return "?";
}

// One line per check: CHECK <name> PASS|FAIL|SKIP lhs=<v> rhs=<v>, with a
// trailing reason token on skipped or annotated checks.
inline void write_report(std::ostream& out, const Report& report) {
  for (const auto& line : report.lines) {
    out << "CHECK " << line.name << ' ' << check_status_name(line.status)
        << " lhs=" << format_g17(line.lhs) << " rhs=" << format_g17(line.rhs);
    if (!line.note.empty()) out << " reason=" << line.note;
    out << '\n';
  }
}

enum class SeriesMetric { objective, grad_norm_sq };

// Two-column whitespace-delimited series: cumulative component-gradient
// evaluations against the chosen metric. Rows without a recorded true
// gradient are skipped for grad_norm_sq.
inline void write_series(std::ostream& out, const Trace& trace,
                         SeriesMetric metric) {
  for (const auto& r : trace.records) {
    switch (metric) {
      case SeriesMetric::objective:
        out << r.evals << ' ' << format_g17(r.f) << '\n';
        break;
      case SeriesMetric::grad_norm_sq:
        if (!std::isnan(r.grad_norm))
          out << r.evals << ' ' << format_g17(r.grad_norm * r.grad_norm)
              << '\n';
        break;
    }
  }
}

}  // namespace trsvr
