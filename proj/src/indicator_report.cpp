// SPDX-License-Identifier: Apache-2.0
#include "mpq/indicator_report.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mpq/format.hpp"

namespace mpq {

void IndicatorReport::validate() const {
  if (bits.empty()) throw std::invalid_argument("indicator report: empty bit-option list");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] < 2 || (i > 0 && bits[i] <= bits[i - 1])) {
      throw std::invalid_argument("indicator report: bit options must be >= 2 and increasing");
    }
  }
  if (weight_scales.size() != layer_ids.size() || act_scales.size() != layer_ids.size()) {
    throw std::invalid_argument("indicator report: scale table does not cover every layer");
  }
  for (std::size_t l = 0; l < layer_ids.size(); ++l) {
    if (weight_scales[l].size() != bits.size() || act_scales[l].size() != bits.size()) {
      throw std::invalid_argument("indicator report: layer " + std::to_string(layer_ids[l]) +
                                  " lacks a value for some bit option");
    }
  }
}

ImportanceTable::ImportanceTable(const IndicatorReport& report, double alpha)
    : layers_(report.layers()), n_(report.options()) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("importance table: alpha must be >= 0");
  report.validate();
  values_.resize(layers_ * n_ * n_);
  for (std::size_t l = 0; l < layers_; ++l)
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        values_[(l * n_ + i) * n_ + j] =
            report.act_scales[l][j] + alpha * report.weight_scales[l][i];
}

void write_indicator_report(std::ostream& os, const IndicatorReport& report) {
  report.validate();
  os << "indicator-report v1\n";
  os << "seed " << report.seed << "\n";
  os << "steps " << report.steps << "\n";
  os << "init " << report.init_scheme << "\n";
  os << "bits";
  for (int b : report.bits) os << ' ' << b;
  os << "\n";
  os << "loss";
  for (double v : report.loss_curve) os << ' ' << format_double(v);
  os << "\n";
  os << "records " << 2 * report.layers() * report.options() << "\n";
  os << "# layer kind bit value\n";
  for (std::size_t l = 0; l < report.layers(); ++l) {
    for (std::size_t i = 0; i < report.options(); ++i) {
      os << report.layer_ids[l] << " w " << report.bits[i] << ' '
         << format_double(report.weight_scales[l][i]) << '\n';
    }
    for (std::size_t i = 0; i < report.options(); ++i) {
      os << report.layer_ids[l] << " a " << report.bits[i] << ' '
         << format_double(report.act_scales[l][i]) << '\n';
    }
  }
}

IndicatorReport read_indicator_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "indicator-report v1") {
    throw std::runtime_error("indicator report: missing 'indicator-report v1' header");
  }
  IndicatorReport r;
  std::size_t expected = 0;
  bool have_records = false;
  // layer -> kind -> bit -> value
  std::map<int, std::map<char, std::map<int, double>>> values;
  std::vector<int> order;
  std::size_t count = 0;
  while (std::getline(is, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tok = split_ws(t);
    const auto key = tok[0];
    if (key == "seed" && tok.size() == 2) {
      r.seed = parse_uint(tok[1]);
    } else if (key == "steps" && tok.size() == 2) {
      r.steps = parse_uint(tok[1]);
    } else if (key == "init" && tok.size() == 2) {
      r.init_scheme = std::string(tok[1]);
    } else if (key == "bits") {
      for (std::size_t i = 1; i < tok.size(); ++i) r.bits.push_back(static_cast<int>(parse_int(tok[i])));
    } else if (key == "loss") {
      for (std::size_t i = 1; i < tok.size(); ++i) r.loss_curve.push_back(parse_double(tok[i]));
    } else if (key == "records" && tok.size() == 2) {
      expected = parse_uint(tok[1]);
      have_records = true;
    } else if (tok.size() == 4) {
      const int layer = static_cast<int>(parse_int(tok[0]));
      const char kind = tok[1] == "w" ? 'w' : tok[1] == "a" ? 'a' : '?';
      if (kind == '?') throw std::runtime_error("indicator report: bad kind in '" + line + "'");
      const int bit = static_cast<int>(parse_int(tok[2]));
      const double v = parse_double(tok[3]);
      if (!values.count(layer)) order.push_back(layer);
      if (!values[layer][kind].emplace(bit, v).second) {
        throw std::runtime_error("indicator report: duplicate record '" + line + "'");
      }
      ++count;
    } else {
      throw std::runtime_error("indicator report: malformed line '" + line + "'");
    }
  }
  if (!have_records || count != expected) {
    throw std::runtime_error("indicator report: record count does not match header");
  }
  for (int layer : order) {
    r.layer_ids.push_back(layer);
    std::vector<double> w, a;
    for (int b : r.bits) {
      auto& lw = values[layer]['w'];
      auto& la = values[layer]['a'];
      if (!lw.count(b) || !la.count(b)) {
        throw std::runtime_error("indicator report: layer " + std::to_string(layer) +
                                 " missing bit " + std::to_string(b));
      }
      w.push_back(lw[b]);
      a.push_back(la[b]);
    }
    r.weight_scales.push_back(std::move(w));
    r.act_scales.push_back(std::move(a));
  }
  r.validate();
  return r;
}

}  // namespace mpq
