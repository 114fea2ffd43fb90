#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ilaprop/model_config.hpp"
#include "ilaprop/schedule.hpp"

namespace ilaprop::flops {

/// mac_as_1 counts one multiply-accumulate as one FLOP (the convention of
/// common PyTorch op counters); mac_as_2 counts it as two.
enum class CountingMode { mac_as_1, mac_as_2 };

std::uint64_t multiplier(CountingMode mode);
std::string to_string(CountingMode mode);

enum class EntryKind {
  conv,         // flops == macs * multiplier
  matmul,       // attention inner products / weighted sums, flops == macs * multiplier
  elementwise,  // no MACs; flops counted directly (softmax exp+divide, pooling, scaling)
};

struct FlopEntry {
  std::string layer;
  EntryKind kind = EntryKind::conv;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

/// Table values reported for other propagation methods. Never computed here.
struct PublishedRow {
  std::string method;
  std::string input_size;
  double gflops = 0.0;
  int convs = 0;
  std::string params;
};

std::vector<PublishedRow> published_reference_rows();

struct FlopReport {
  std::vector<FlopEntry> entries;
  CountingMode mode = CountingMode::mac_as_1;
  /// Number of frames the entries were accumulated over.
  std::size_t frames = 1;
  std::vector<PublishedRow> published;

  std::uint64_t total_macs() const;
  std::uint64_t total_flops() const;
  std::uint64_t total_params() const;
  double per_frame_flops() const;
  double per_frame_gflops() const { return per_frame_flops() / 1e9; }
};

struct ConvCost {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

/// macs = H'*W'*Cout*Cin*kh*kw, params = Cout*Cin*kh*kw (+ Cout with bias).
ConvCost count_conv(std::size_t height, std::size_t width, std::size_t in_channels,
                    std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                    std::size_t stride, std::size_t padding, bool bias = true);

struct IlaCost {
  std::uint64_t macs = 0;            // h on both maps + logits + weighted sum
  std::uint64_t attention_macs = 0;  // logits + weighted sum only
  std::uint64_t softmax_flops = 0;   // one exp and one divide per window entry
  std::uint64_t params = 0;          // the single shared 3x3 conv
};

IlaCost count_ila(std::size_t height, std::size_t width, std::size_t channels, std::size_t window);

/// 2*(H*W*C*C*9) + 2*(H*W)^2*C
std::uint64_t count_global_attention(std::size_t height, std::size_t width, std::size_t channels);
/// The dense attention part alone, 2*(H*W)^2*C.
std::uint64_t global_attention_terms(std::size_t height, std::size_t width, std::size_t channels);

/// Per-layer cost of processing one frame routed as `entry`; input is H x W.
std::vector<FlopEntry> frame_entries(const ModelConfig& config, std::size_t height,
                                     std::size_t width, const ScheduleEntry& entry,
                                     CountingMode mode = CountingMode::mac_as_1);
std::uint64_t frame_flops(const ModelConfig& config, std::size_t height, std::size_t width,
                          const ScheduleEntry& entry, CountingMode mode = CountingMode::mac_as_1);

/// Encoder cost alone.
std::uint64_t encoder_macs(const EncoderConfig& encoder, std::size_t height, std::size_t width);

/// Layer costs summed over every frame of the schedule. Entries with the same
/// layer name are merged (MACs and FLOPs add up, parameters count once).
FlopReport model_report(const ModelConfig& config, std::size_t height, std::size_t width,
                        const Schedule& schedule, CountingMode mode = CountingMode::mac_as_1);

void write_report_text(std::ostream& os, const FlopReport& report);
/// Columns: layer,macs,flops,params
void write_report_csv(std::ostream& os, const FlopReport& report);
/// Columns: method,input_size,gflops,convs,params,source
void write_published_csv(std::ostream& os, const std::vector<PublishedRow>& rows);

}  // namespace ilaprop::flops
