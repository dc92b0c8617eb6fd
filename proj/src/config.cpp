// SPDX-License-Identifier: Apache-2.0
#include "mpq/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mpq/digest.hpp"
#include "mpq/format.hpp"

namespace mpq {

namespace {

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

std::optional<bool> parse_tristate(const std::string& v) {
  if (v == "auto") return std::nullopt;
  return parse_bool(v);
}

Shape parse_shape(const std::string& v) {
  Shape s;
  std::string token;
  std::stringstream ss(v);
  while (std::getline(ss, token, 'x')) s.push_back(parse_uint(trim(token)));
  if (s.empty()) throw std::invalid_argument("empty shape");
  return s;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::string bits_text(const std::vector<int>& bits) {
  std::string out;
  for (std::size_t i = 0; i < bits.size(); ++i) out += (i ? "," : "") + std::to_string(bits[i]);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

void add_train_keys(std::map<std::string, Setter>& keys, const std::string& section,
                    TrainOptions RunConfig::*member) {
  keys[section + ".steps"] = [member](RunConfig& c, const std::string& v) { (c.*member).steps = parse_uint(v); };
  keys[section + ".batch_size"] = [member](RunConfig& c, const std::string& v) { (c.*member).batch_size = parse_uint(v); };
  keys[section + ".lr"] = [member](RunConfig& c, const std::string& v) { (c.*member).lr = parse_double(v); };
  keys[section + ".scale_lr"] = [member](RunConfig& c, const std::string& v) { (c.*member).scale_lr = parse_double(v); };
  keys[section + ".momentum"] = [member](RunConfig& c, const std::string& v) { (c.*member).momentum = parse_double(v); };
  keys[section + ".weight_decay"] = [member](RunConfig& c, const std::string& v) { (c.*member).weight_decay = parse_double(v); };
  keys[section + ".schedule"] = [member](RunConfig& c, const std::string& v) { (c.*member).schedule = v; };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> k;
    k["run.model"] = [](RunConfig& c, const std::string& v) { c.model = v; };
    k["run.seed"] = [](RunConfig& c, const std::string& v) { c.seed = parse_uint(v); };
    k["run.exempt_first_last"] = [](RunConfig& c, const std::string& v) { c.exempt_first_last = parse_tristate(v); };
    k["run.hidden"] = [](RunConfig& c, const std::string& v) { c.hidden = parse_uint(v); };
    k["run.out_dir"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };

    k["data.source"] = [](RunConfig& c, const std::string& v) { c.data.source = v; };
    k["data.classes"] = [](RunConfig& c, const std::string& v) { c.data.synth.classes = parse_uint(v); };
    k["data.train_samples"] = [](RunConfig& c, const std::string& v) { c.data.synth.train_samples = parse_uint(v); };
    k["data.val_samples"] = [](RunConfig& c, const std::string& v) { c.data.synth.val_samples = parse_uint(v); };
    k["data.input_shape"] = [](RunConfig& c, const std::string& v) { c.data.synth.input_shape = parse_shape(v); };
    k["data.prototype_spread"] = [](RunConfig& c, const std::string& v) { c.data.synth.prototype_spread = parse_double(v); };
    k["data.noise"] = [](RunConfig& c, const std::string& v) { c.data.synth.noise = parse_double(v); };
    k["data.train_images"] = [](RunConfig& c, const std::string& v) { c.data.train_images = v; };
    k["data.train_labels"] = [](RunConfig& c, const std::string& v) { c.data.train_labels = v; };
    k["data.val_images"] = [](RunConfig& c, const std::string& v) { c.data.val_images = v; };
    k["data.val_labels"] = [](RunConfig& c, const std::string& v) { c.data.val_labels = v; };

    add_train_keys(k, "pretrain", &RunConfig::pretrain);
    add_train_keys(k, "finetune", &RunConfig::finetune);
    k["finetune.baseline_uniform_bits"] = [](RunConfig& c, const std::string& v) { c.baseline_uniform_bits = static_cast<int>(parse_int(v)); };

    k["indicators.bits"] = [](RunConfig& c, const std::string& v) { c.indicators.bits = parse_bit_list(v); };
    k["indicators.steps"] = [](RunConfig& c, const std::string& v) { c.indicators.steps = parse_uint(v); };
    k["indicators.batch_size"] = [](RunConfig& c, const std::string& v) { c.indicators.batch_size = parse_uint(v); };
    k["indicators.lr"] = [](RunConfig& c, const std::string& v) { c.indicators.lr = parse_double(v); };
    k["indicators.scale_lr"] = [](RunConfig& c, const std::string& v) { c.indicators.scale_lr = parse_double(v); };
    k["indicators.momentum"] = [](RunConfig& c, const std::string& v) { c.indicators.momentum = parse_double(v); };
    k["indicators.weight_decay"] = [](RunConfig& c, const std::string& v) { c.indicators.weight_decay = parse_double(v); };
    k["indicators.schedule"] = [](RunConfig& c, const std::string& v) { c.indicators.schedule = v; };
    k["indicators.data_fraction"] = [](RunConfig& c, const std::string& v) { c.indicators.data_fraction = parse_double(v); };
    k["indicators.init"] = [](RunConfig& c, const std::string& v) { c.indicators.init_scheme = v; };
    k["indicators.scale_step_grad"] = [](RunConfig& c, const std::string& v) { c.indicators.scale_step_grad = parse_bool(v); };

    k["search.alpha"] = [](RunConfig& c, const std::string& v) { c.search.alpha = parse_double(v); };
    k["search.budget_bitops"] = [](RunConfig& c, const std::string& v) { c.search.budget_bitops = parse_uint(v); };
    k["search.budget_bitops_level"] = [](RunConfig& c, const std::string& v) { c.search.budget_bitops_level = static_cast<int>(parse_int(v)); };
    k["search.budget_size_bits"] = [](RunConfig& c, const std::string& v) { c.search.budget_size_bits = parse_uint(v); };
    k["search.reversed"] = [](RunConfig& c, const std::string& v) { c.search.reversed = parse_bool(v); };
    return k;
  }();
  return table;
}

}  // namespace

std::vector<int> parse_bit_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string token;
  try {
    while (std::getline(ss, token, ',')) out.push_back(static_cast<int>(parse_int(trim(token))));
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad bit list '" + text + "'");
  }
  if (out.empty()) throw ConfigError("empty bit list");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 2 || out[i] > 16 || (i > 0 && out[i] <= out[i - 1])) {
      throw ConfigError("bit list '" + text + "' must be strictly increasing, each in [2,16]");
    }
  }
  return out;
}

RunConfig parse_config(std::istream& is, const std::string& origin) {
  RunConfig cfg;
  std::string section, line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::string_view body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(body.substr(1, body.size() - 2)));
      static const char* known[] = {"run", "data", "pretrain", "indicators", "search", "finetune"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    const std::string key = section + "." + std::string(trim(body.substr(0, eq)));
    const std::string value = unquote(trim(body.substr(eq + 1)));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
    }
  }
  cfg.apply_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.synth.seed = s;
  pretrain.seed = s;
  indicators.seed = s;
  finetune.seed = s;
}

void RunConfig::validate() const {
  try {
    if (model != "mlp" && model != "cnn" && model != "contrast") {
      throw ConfigError("unknown model '" + model + "'");
    }
    if (data.source == "idx") {
      if (data.train_images.empty() || data.train_labels.empty()) {
        throw ConfigError("idx data needs train_images and train_labels");
      }
      if (data.val_images.empty() != data.val_labels.empty()) {
        throw ConfigError("val_images and val_labels must be given together");
      }
    } else if (data.source == "synthetic") {
      if (data.synth.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
      if (data.synth.train_samples == 0 || data.synth.val_samples == 0) {
        throw ConfigError("synthetic data needs train and val samples");
      }
    } else {
      throw ConfigError("unknown data source '" + data.source + "'");
    }
    pretrain.validate();
    finetune.validate();
    indicators.validate();
    if (!(search.alpha >= 0)) throw ConfigError("alpha must be >= 0");
    if (search.budget_bitops_level && (*search.budget_bitops_level < 2 || *search.budget_bitops_level > 32)) {
      throw ConfigError("budget_bitops_level must be in [2,32]");
    }
    if (search.budget_bitops && search.budget_bitops_level) {
      throw ConfigError("give budget_bitops or budget_bitops_level, not both");
    }
    if (!search.budget_bitops && !search.budget_bitops_level && !search.budget_size_bits) {
      throw ConfigError("no search budget configured");
    }
    if (baseline_uniform_bits != 0 && (baseline_uniform_bits < 2 || baseline_uniform_bits > 16)) {
      throw ConfigError("baseline_uniform_bits must be 0 or in [2,16]");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  auto train = [&os](const char* name, const TrainOptions& t) {
    os << "[" << name << "]\nsteps = " << t.steps << "\nbatch_size = " << t.batch_size
       << "\nlr = " << format_double(t.lr) << "\nscale_lr = " << format_double(t.scale_lr)
       << "\nmomentum = " << format_double(t.momentum)
       << "\nweight_decay = " << format_double(t.weight_decay) << "\nschedule = " << t.schedule
       << "\n";
  };
  os << "[run]\nmodel = " << model << "\nseed = " << seed << "\nexempt_first_last = "
     << (exempt_first_last ? (*exempt_first_last ? "true" : "false") : "auto")
     << "\nhidden = " << hidden << "\n";
  os << "[data]\nsource = " << data.source << "\n";
  if (data.source == "synthetic") {
    os << "classes = " << data.synth.classes << "\ntrain_samples = " << data.synth.train_samples
       << "\nval_samples = " << data.synth.val_samples
       << "\ninput_shape = " << shape_text(data.synth.input_shape)
       << "\nprototype_spread = " << format_double(data.synth.prototype_spread)
       << "\nnoise = " << format_double(data.synth.noise) << "\n";
  } else {
    os << "train_images = " << data.train_images.string()
       << "\ntrain_labels = " << data.train_labels.string()
       << "\nval_images = " << data.val_images.string()
       << "\nval_labels = " << data.val_labels.string() << "\n";
  }
  train("pretrain", pretrain);
  const auto& ic = indicators;
  os << "[indicators]\nbits = " << bits_text(ic.bits) << "\nsteps = " << ic.steps
     << "\nbatch_size = " << ic.batch_size << "\nlr = " << format_double(ic.lr)
     << "\nscale_lr = " << format_double(ic.scale_lr)
     << "\nmomentum = " << format_double(ic.momentum)
     << "\nweight_decay = " << format_double(ic.weight_decay) << "\nschedule = " << ic.schedule
     << "\ndata_fraction = " << format_double(ic.data_fraction) << "\ninit = " << ic.init_scheme
     << "\nscale_step_grad = " << (ic.scale_step_grad ? "true" : "false") << "\n";
  os << "[search]\nalpha = " << format_double(search.alpha) << "\n";
  if (search.budget_bitops) os << "budget_bitops = " << *search.budget_bitops << "\n";
  if (search.budget_bitops_level) os << "budget_bitops_level = " << *search.budget_bitops_level << "\n";
  if (search.budget_size_bits) os << "budget_size_bits = " << *search.budget_size_bits << "\n";
  os << "reversed = " << (search.reversed ? "true" : "false") << "\n";
  train("finetune", finetune);
  os << "baseline_uniform_bits = " << baseline_uniform_bits << "\n";
  return os.str();
}

std::string RunConfig::digest() const { return sha256_hex(canonical()); }

}  // namespace mpq
