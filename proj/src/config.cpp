#include "ilaprop/config.hpp"

#include "ilaprop/ila.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace ilaprop {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* want) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  if (!value.empty() && value[0] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last || first == last) bad_value(key, value, want);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("failed to format a double");
  return std::string(buf, ptr);
}

std::string format_stages(const std::vector<StageSpec>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(stages[i].out_channels) + ':' + std::to_string(stages[i].stride);
  }
  return out;
}

std::vector<StageSpec> parse_stages(const std::string& key, const std::string& value) {
  std::vector<StageSpec> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) bad_value(key, value, "channels:stride list");
    StageSpec s;
    s.out_channels = parse_number<std::size_t>(key, trim(item.substr(0, colon)), "channels");
    s.stride = parse_number<std::size_t>(key, trim(item.substr(colon + 1)), "stride");
    out.push_back(s);
  }
  if (out.empty()) bad_value(key, value, "channels:stride list");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "boolean");
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
};

template <typename T, typename Cfg>
Field number_field(T Cfg::*member) {
  return {[member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<T>(k, v, std::is_floating_point_v<T> ? "number" : "integer");
          }};
}

Field bool_field(bool ExperimentConfig::*member) {
  return {[member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          }};
}

Field string_field(std::string ExperimentConfig::*member) {
  return {[member](const ExperimentConfig& c) { return c.*member; },
          [member](ExperimentConfig& c, const std::string&, const std::string& v) {
            c.*member = v;
          }};
}

Field stages_field(std::vector<StageSpec> ExperimentConfig::*member) {
  return {[member](const ExperimentConfig& c) { return format_stages(c.*member); },
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_stages(k, v);
          }};
}

Propagation parse_propagation(const std::string& k, const std::string& v) {
  if (v == "ila") return Propagation::ila;
  if (v == "global") return Propagation::global;
  if (v == "none") return Propagation::none;
  bad_value(k, v, "one of ila, global, none");
}

Routing parse_routing(const std::string& k, const std::string& v) {
  if (v == "previous_frame") return Routing::previous_frame;
  if (v == "last_non_keyframe") return Routing::last_non_keyframe;
  bad_value(k, v, "one of previous_frame, last_non_keyframe");
}

using FieldTable = std::vector<std::pair<std::string, Field>>;

const FieldTable& fields() {
  using C = ExperimentConfig;
  static const FieldTable table = {
      {"name", string_field(&C::name)},
      {"channels", number_field(&C::channels)},
      {"slow_stages", stages_field(&C::slow_stages)},
      {"fast_stages", stages_field(&C::fast_stages)},
      {"se_reduction", number_field(&C::se_reduction)},
      {"decoder_width1", number_field(&C::decoder_width1)},
      {"decoder_width2", number_field(&C::decoder_width2)},
      {"segmentation", bool_field(&C::segmentation)},
      {"depth", bool_field(&C::depth)},
      {"keyframe_interval", number_field(&C::keyframe_interval)},
      {"window", number_field(&C::window)},
      {"logit_scale", number_field(&C::logit_scale)},
      {"propagation",
       {[](const C& c) { return to_string(c.propagation); },
        [](C& c, const std::string& k, const std::string& v) {
          c.propagation = parse_propagation(k, v);
        }}},
      {"routing",
       {[](const C& c) { return to_string(c.routing); },
        [](C& c, const std::string& k, const std::string& v) { c.routing = parse_routing(k, v); }}},
      {"alpha", number_field(&C::alpha)},
      {"beta", number_field(&C::beta)},
      {"grl_lambda", number_field(&C::grl_lambda)},
      {"seg_weight", number_field(&C::seg_weight)},
      {"depth_weight", number_field(&C::depth_weight)},
      {"disc_width", number_field(&C::disc_width)},
      {"height", number_field(&C::height)},
      {"width", number_field(&C::width)},
      {"shape_classes", number_field(&C::shape_classes)},
      {"objects", number_field(&C::objects)},
      {"train_sequences", number_field(&C::train_sequences)},
      {"eval_sequences", number_field(&C::eval_sequences)},
      {"max_speed", number_field(&C::max_speed)},
      {"noise", number_field(&C::noise)},
      {"lr", number_field(&C::lr)},
      {"adam_beta1", number_field(&C::adam_beta1)},
      {"adam_beta2", number_field(&C::adam_beta2)},
      {"adam_eps", number_field(&C::adam_eps)},
      {"steps", number_field(&C::steps)},
      {"batch_size", number_field(&C::batch_size)},
      {"seed", number_field(&C::seed)},
      {"data_seed", number_field(&C::data_seed)},
      {"output_dir", string_field(&C::output_dir)},
  };
  return table;
}

const Field& lookup(const std::string& key) {
  for (const auto& [name, field] : fields()) {
    if (name == key) return field;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& entry : fields()) out.push_back(entry.first);
  return out;
}

ModelConfig to_model_config(const ExperimentConfig& c) {
  ModelConfig m;
  m.channels = c.channels;
  m.slow.branch = Branch::Slow;
  m.slow.stages = c.slow_stages;
  m.fast.branch = Branch::Fast;
  m.fast.stages = c.fast_stages;
  m.se_reduction = c.se_reduction;
  m.decoder_width1 = c.decoder_width1;
  m.decoder_width2 = c.decoder_width2;
  if (c.segmentation) {
    m.tasks.push_back({"segmentation", TaskKind::segmentation, c.shape_classes + 1});
  }
  if (c.depth) m.tasks.push_back({"depth", TaskKind::depth, 1});
  m.window = c.window;
  m.logit_scale = c.logit_scale;
  m.propagation = c.propagation;
  m.routing = c.routing;
  return m;
}

SyntheticParams to_synthetic_params(const ExperimentConfig& c) {
  SyntheticParams p;
  p.height = c.height;
  p.width = c.width;
  p.num_shape_classes = c.shape_classes;
  p.objects_per_sequence = c.objects;
  p.num_frames = c.keyframe_interval + 1;
  p.max_speed = c.max_speed;
  p.noise = c.noise;
  p.window = c.window;
  p.feature_stride = 1;
  for (const auto& s : c.slow_stages) p.feature_stride *= s.stride;
  return p;
}

LossConfig to_loss_config(const ExperimentConfig& c) {
  LossConfig l;
  l.alpha = c.alpha;
  l.beta = c.beta;
  l.grl_lambda = c.grl_lambda;
  if (c.segmentation) l.task_weights.push_back(c.seg_weight);
  if (c.depth) l.task_weights.push_back(c.depth_weight);
  return l;
}

AdamConfig to_adam_config(const ExperimentConfig& c) {
  return {c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps};
}

void validate(const ExperimentConfig& c) {
  if (c.name.empty()) throw std::invalid_argument("config: name must not be empty");
  if (!c.segmentation && !c.depth) throw std::invalid_argument("config: no task enabled");
  if (c.keyframe_interval == 0) throw std::invalid_argument("config: keyframe_interval must be >= 1");
  if (c.disc_width == 0) throw std::invalid_argument("config: disc_width must be >= 1");
  if (c.train_sequences == 0 || c.eval_sequences == 0) {
    throw std::invalid_argument("config: train_sequences and eval_sequences must be >= 1");
  }
  if (c.batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.batch_size > c.train_sequences) {
    throw std::invalid_argument("config: batch_size exceeds train_sequences");
  }
  if (!(c.seg_weight >= 0.0) || !(c.depth_weight >= 0.0)) {
    throw std::invalid_argument("config: task weights must be >= 0");
  }
  if (c.output_dir.empty()) throw std::invalid_argument("config: output_dir must not be empty");
  const auto model = to_model_config(c);
  validate(model);
  ILAConfig ila;
  ila.window = c.window;
  ila.channels = c.channels;
  ila.logit_scale = c.logit_scale;
  validate(ila);
  validate(to_synthetic_params(c));
  if (c.height % model.feature_stride() != 0 || c.width % model.feature_stride() != 0) {
    throw std::invalid_argument("config: frame size must be a multiple of the feature stride " +
                                std::to_string(model.feature_stride()));
  }
  validate(to_loss_config(c), model.tasks.size());
  // Constructing the optimiser state checks its hyperparameters.
  AdamState probe({}, to_adam_config(c));
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const Field& field = lookup(key);
    if (!seen.insert(key).second) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": key '" + key +
                                  "' given twice");
    }
    field.set(c, key, value);
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(c) + "\n";
  return out;
}

namespace {

void assign(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override '" + assignment + "' is not key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  lookup(key).set(c, key, trim(assignment.substr(eq + 1)));
}

}  // namespace

void apply_override(ExperimentConfig& c, const std::string& assignment) {
  ExperimentConfig next = c;
  assign(next, assignment);
  validate(next);
  c = std::move(next);
}

void apply_overrides(ExperimentConfig& c, std::span<const std::string> assignments) {
  ExperimentConfig next = c;
  for (const auto& a : assignments) assign(next, a);
  validate(next);
  c = std::move(next);
}

}  // namespace ilaprop
