#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "foulseg/taxonomy.hpp"

namespace foulseg {

/// Time-ordered masks of one panel. Timestamps are ISO dates (YYYY-MM-DD).
struct LayerStack {
  std::string panel_id;
  std::vector<std::string> timestamps;
  std::vector<SegmentationMask> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  int width() const { return layers.front().width(); }
  int height() const { return layers.front().height(); }
};

/// Sorts by date. Throws DimensionMismatch, DuplicateDate, InvalidConfig (empty input or malformed date).
LayerStack build_layer_stack(std::vector<std::pair<std::string, SegmentationMask>> masks,
                             std::string panel_id = {});

struct AttachmentOptions {
  /// When set, a return to bare clears the organism seen so far.
  bool reset_on_bare = false;
};

struct AttachmentReport {
  SegmentationMask bottom;
  ClassDistribution coverage;
};

AttachmentReport direct_surface_attachment(const LayerStack& stack, const AttachmentOptions& options = {});

struct TransitionMatrix {
  std::string from_time, to_time;
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};
  std::array<std::array<double, kNumClasses>, kNumClasses> row_probs{};

  std::int64_t total() const noexcept;
};

/// One matrix per consecutive frame pair over pixels labeled in both. Throws SingleFrame.
std::vector<TransitionMatrix> transition_matrices(const LayerStack& stack);

struct SuccessionNode {
  std::vector<int> path;
  std::int64_t pixels = 0;
};

/// Nested prefix counts (time inner to outer); a node of depth L counts pixels labeled in frames 0..L-1.
/// Nodes below threshold * (labeled pixels of the first frame) are dropped with their subtrees.
std::vector<SuccessionNode> succession_nodes(const LayerStack& stack, double threshold);
nlohmann::json succession_json(const LayerStack& stack, double threshold);

/// Writes coverage.csv, attachment.csv, bottom.png and stack/ (frame PNGs plus index.json); with two or more
/// frames also transitions.csv and succession.json.
void export_succession(const LayerStack& stack, const std::vector<TransitionMatrix>& matrices,
                       const AttachmentReport& report, const std::filesystem::path& dir, double threshold = 0.01);

LayerStack load_layer_stack(const std::filesystem::path& stack_dir);

}  // namespace foulseg
