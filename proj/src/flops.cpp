#include "ilaprop/flops.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>

#include "ilaprop/ops.hpp"

namespace ilaprop::flops {

std::uint64_t multiplier(CountingMode mode) { return mode == CountingMode::mac_as_2 ? 2 : 1; }

std::string to_string(CountingMode mode) {
  return mode == CountingMode::mac_as_2 ? "mac_as_2" : "mac_as_1";
}

std::vector<PublishedRow> published_reference_rows() {
  return {
      {"Optical flow", "258x512", 7.5, 23, "38M"},
      {"SVC", "258x512", 5.4, 3, "3M"},
      {"ILA", "258x512", 0.2, 1, "0.2M"},
      {"Optical flow", "1024x2048", 71.2, 23, "38M"},
      {"SVC", "1024x2048", 108.0, 3, "3M"},
      {"ILA", "1024x2048", 5.4, 1, "0.2M"},
  };
}

std::uint64_t FlopReport::total_macs() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.macs;
  return t;
}

std::uint64_t FlopReport::total_flops() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.flops;
  return t;
}

std::uint64_t FlopReport::total_params() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.params;
  return t;
}

double FlopReport::per_frame_flops() const {
  return frames == 0 ? 0.0 : static_cast<double>(total_flops()) / static_cast<double>(frames);
}

ConvCost count_conv(std::size_t height, std::size_t width, std::size_t in_channels,
                    std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                    std::size_t stride, std::size_t padding, bool bias) {
  if (height == 0 || width == 0 || in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("count_conv: dimensions must be positive");
  }
  const std::uint64_t oh = conv_out_extent(height, kernel_h, stride, padding, "height");
  const std::uint64_t ow = conv_out_extent(width, kernel_w, stride, padding, "width");
  const std::uint64_t taps = static_cast<std::uint64_t>(in_channels) * kernel_h * kernel_w;
  ConvCost c;
  c.macs = oh * ow * out_channels * taps;
  c.params = out_channels * taps + (bias ? out_channels : 0);
  return c;
}

IlaCost count_ila(std::size_t height, std::size_t width, std::size_t channels, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("count_ila: window must be odd and positive");
  }
  const auto h = count_conv(height, width, channels, channels, 3, 3, 1, 1);
  const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;
  const std::uint64_t l2 = static_cast<std::uint64_t>(window) * window;
  IlaCost c;
  c.attention_macs = 2 * hw * l2 * channels;
  c.macs = 2 * h.macs + c.attention_macs;
  c.softmax_flops = 2 * hw * l2;
  c.params = h.params;
  return c;
}

std::uint64_t global_attention_terms(std::size_t height, std::size_t width, std::size_t channels) {
  if (height == 0 || width == 0 || channels == 0) {
    throw std::invalid_argument("count_global_attention: dimensions must be positive");
  }
  const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;
  return 2 * hw * hw * channels;
}

std::uint64_t count_global_attention(std::size_t height, std::size_t width, std::size_t channels) {
  const auto h = count_conv(height, width, channels, channels, 3, 3, 1, 1);
  return 2 * h.macs + global_attention_terms(height, width, channels);
}

namespace {

struct Builder {
  CountingMode mode;
  std::vector<FlopEntry> entries;

  void conv(const std::string& name, const ConvCost& c, bool count_params = true) {
    entries.push_back({name, EntryKind::conv, c.macs, c.macs * multiplier(mode),
                       count_params ? c.params : 0});
  }
  void matmul(const std::string& name, std::uint64_t macs) {
    entries.push_back({name, EntryKind::matmul, macs, macs * multiplier(mode), 0});
  }
  void elementwise(const std::string& name, std::uint64_t flops) {
    entries.push_back({name, EntryKind::elementwise, 0, flops, 0});
  }
};

// Returns the output extents.
std::pair<std::size_t, std::size_t> add_encoder(Builder& b, const EncoderConfig& enc,
                                                std::size_t height, std::size_t width) {
  const std::string prefix = enc.branch == Branch::Slow ? "slow" : "fast";
  std::size_t cin = enc.in_channels, h = height, w = width;
  for (std::size_t i = 0; i < enc.stages.size(); ++i) {
    const auto& s = enc.stages[i];
    b.conv(prefix + ".stage" + std::to_string(i),
           count_conv(h, w, cin, s.out_channels, s.kernel(), s.kernel(), s.stride, s.padding()));
    h = conv_out_extent(h, s.kernel(), s.stride, s.padding(), "height");
    w = conv_out_extent(w, s.kernel(), s.stride, s.padding(), "width");
    cin = s.out_channels;
  }
  return {h, w};
}

void add_edge(Builder& b, const std::string& name, const ModelConfig& cfg, std::size_t h,
              std::size_t w) {
  const std::size_t c = cfg.channels;
  const auto hconv = count_conv(h, w, c, c, 3, 3, 1, 1);
  // Both conv applications belong to the same h; its parameters count once.
  b.conv(name + ".h_query", hconv);
  b.conv(name + ".h_source", hconv, false);
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  if (cfg.propagation == Propagation::global) {
    b.matmul(name + ".logits", hw * hw * c);
    b.elementwise(name + ".softmax", 2 * hw * hw);
    b.matmul(name + ".aggregate", hw * hw * c);
  } else {
    const std::uint64_t l2 = static_cast<std::uint64_t>(cfg.window) * cfg.window;
    b.matmul(name + ".logits", hw * l2 * c);
    b.elementwise(name + ".softmax", 2 * hw * l2);
    b.matmul(name + ".aggregate", hw * l2 * c);
  }
}

}  // namespace

std::uint64_t encoder_macs(const EncoderConfig& encoder, std::size_t height, std::size_t width) {
  Builder b{CountingMode::mac_as_1, {}};
  add_encoder(b, encoder, height, width);
  std::uint64_t t = 0;
  for (const auto& e : b.entries) t += e.macs;
  return t;
}

std::vector<FlopEntry> frame_entries(const ModelConfig& config, std::size_t height,
                                     std::size_t width, const ScheduleEntry& entry,
                                     CountingMode mode) {
  validate(config);
  Builder b{mode, {}};
  const auto [h, w] =
      add_encoder(b, entry.branch == Branch::Slow ? config.slow : config.fast, height, width);
  const std::size_t c = config.channels;
  const std::size_t hidden = c / config.se_reduction;
  const std::uint64_t plane = static_cast<std::uint64_t>(h) * w;
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    const std::string p = "task" + std::to_string(t);
    b.elementwise(p + ".se.pool", plane * c);
    b.conv(p + ".se.reduce", count_conv(1, 1, c, hidden, 1, 1, 1, 0));
    b.conv(p + ".se.expand", count_conv(1, 1, hidden, c, 1, 1, 1, 0));
    b.elementwise(p + ".se.scale", plane * c);
    if (config.propagation != Propagation::none) {
      if (entry.keyframe_source) add_edge(b, p + ".ila_key", config, h, w);
      if (entry.previous_source) add_edge(b, p + ".ila_prev", config, h, w);
    }
    b.conv(p + ".decoder.conv1", count_conv(h, w, 3 * c, config.decoder_width1, 3, 3, 1, 1));
    b.conv(p + ".decoder.conv2",
           count_conv(h, w, config.decoder_width1, config.decoder_width2, 1, 1, 1, 0));
    b.conv(p + ".decoder.conv3",
           count_conv(h, w, config.decoder_width2, config.decoder_width2, 1, 1, 1, 0));
    b.conv(p + ".head",
           count_conv(h, w, config.decoder_width2, config.tasks[t].out_channels, 1, 1, 1, 0));
  }
  return b.entries;
}

std::uint64_t frame_flops(const ModelConfig& config, std::size_t height, std::size_t width,
                          const ScheduleEntry& entry, CountingMode mode) {
  std::uint64_t t = 0;
  for (const auto& e : frame_entries(config, height, width, entry, mode)) t += e.flops;
  return t;
}

FlopReport model_report(const ModelConfig& config, std::size_t height, std::size_t width,
                        const Schedule& schedule, CountingMode mode) {
  if (schedule.empty()) throw std::invalid_argument("model_report: empty schedule");
  FlopReport report;
  report.mode = mode;
  report.frames = schedule.size();
  report.published = published_reference_rows();
  std::map<std::string, std::size_t> index;
  for (const auto& entry : schedule) {
    for (auto& e : frame_entries(config, height, width, entry, mode)) {
      auto it = index.find(e.layer);
      if (it == index.end()) {
        index.emplace(e.layer, report.entries.size());
        report.entries.push_back(std::move(e));
      } else {
        auto& acc = report.entries[it->second];
        acc.macs += e.macs;
        acc.flops += e.flops;
      }
    }
  }
  return report;
}

void write_report_text(std::ostream& os, const FlopReport& report) {
  std::size_t width = 5;
  for (const auto& e : report.entries) width = std::max(width, e.layer.size());
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << std::right
     << std::setw(16) << "macs" << std::setw(16) << "flops" << std::setw(12) << "params" << '\n';
  for (const auto& e : report.entries) {
    os << std::left << std::setw(static_cast<int>(width)) << e.layer << std::right
       << std::setw(16) << e.macs << std::setw(16) << e.flops << std::setw(12) << e.params
       << '\n';
  }
  os << std::left << std::setw(static_cast<int>(width)) << "total" << std::right
     << std::setw(16) << report.total_macs() << std::setw(16) << report.total_flops()
     << std::setw(12) << report.total_params() << '\n';
  os << "counting mode: " << to_string(report.mode) << ", frames: " << report.frames
     << ", per-frame GFLOPs: " << std::setprecision(6) << report.per_frame_gflops() << '\n';
  if (!report.published.empty()) {
    os << "\nPublished values (not computed): propagation module cost\n";
    os << std::left << std::setw(14) << "method" << std::setw(12) << "input" << std::right
       << std::setw(8) << "GFLOPs" << std::setw(8) << "#conv" << std::setw(8) << "#param"
       << '\n';
    for (const auto& r : report.published) {
      os << std::left << std::setw(14) << r.method << std::setw(12) << r.input_size
         << std::right << std::setw(8) << r.gflops << std::setw(8) << r.convs << std::setw(8)
         << r.params << "  [published, not computed]\n";
    }
  }
}

void write_report_csv(std::ostream& os, const FlopReport& report) {
  os << "layer,macs,flops,params\n";
  for (const auto& e : report.entries) {
    os << e.layer << ',' << e.macs << ',' << e.flops << ',' << e.params << '\n';
  }
  os << "total," << report.total_macs() << ',' << report.total_flops() << ','
     << report.total_params() << '\n';
}

void write_published_csv(std::ostream& os, const std::vector<PublishedRow>& rows) {
  os << "method,input_size,gflops,convs,params,source\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.input_size << ',' << r.gflops << ',' << r.convs << ','
       << r.params << ",published (not computed)\n";
  }
}

}  // namespace ilaprop::flops
