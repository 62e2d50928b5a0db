#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attrstream/trace.hpp"

namespace attrstream {

struct SegmenterOptions {
  bool sentences = true;  // [.?!] followed by whitespace
  bool newlines = true;
  bool bullets = true;    // a token opening with a bullet glyph
  bool step_markers = true;  // "Step N:" opens a span
  std::vector<std::string> open_delimiters{"<think>", "<|think|>"};
  std::vector<std::string> close_delimiters{"</think>"};
};

struct SegmentEvent {
  enum class Kind { token, span_closed };
  Kind kind = Kind::token;
  std::uint32_t token = 0;  // for Kind::token
  Span span;                // for Kind::span_closed
};

/// Incremental span segmentation over a token stream.
///
/// A token is released once the segmenter knows whether a boundary sits in
/// front of it; that needs at most the few tokens it takes to confirm or rule
/// out a "Step N:" marker. Every token lands in exactly one span and spans
/// close in order, the last one on finish().
class SpanSegmenter {
 public:
  explicit SpanSegmenter(SegmenterOptions options = {});

  std::vector<SegmentEvent> push(std::string_view token);
  std::vector<SegmentEvent> finish();

  std::uint32_t tokens_seen() const { return next_; }
  std::size_t pending() const { return pending_.size(); }

 private:
  enum class Decision { boundary, none, undecided };
  Decision decide(bool at_end) const;
  void drain(bool at_end, std::vector<SegmentEvent>& out);
  Span close_span(std::uint32_t end);

  SegmenterOptions options_;
  std::deque<std::string> pending_;
  std::uint32_t next_ = 0;      // index of the next token pushed
  std::uint32_t released_ = 0;  // tokens released so far
  std::uint32_t open_start_ = 0;
  std::string open_text_;
  std::string prev_text_;
  bool finished_ = false;
};

std::vector<Span> segment_spans(std::span<const std::string> tokens,
                                const SegmenterOptions& options = {});

}  // namespace attrstream
