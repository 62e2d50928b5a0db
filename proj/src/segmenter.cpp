#include "attrstream/segmenter.hpp"

#include <cctype>
#include <regex>

#include "attrstream/error.hpp"

namespace attrstream {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool whitespace_only(std::string_view s) { return trim(s).empty(); }

bool starts_with_newline(std::string_view s) {
  for (char c : s) {
    if (c == '\n') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return false;
}

bool ends_with_newline(std::string_view s) {
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    if (*it == '\n') return true;
    if (*it != ' ' && *it != '\t' && *it != '\r') return false;
  }
  return false;
}

bool is_terminal(char c) { return c == '.' || c == '?' || c == '!'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

// Sentence punctuation followed by whitespace inside the token.
bool has_inner_sentence_end(std::string_view s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!is_terminal(s[i])) continue;
    std::size_t j = i + 1;
    while (j < s.size() && is_closer(s[j])) ++j;
    if (j < s.size() && is_space(s[j])) return true;
  }
  return false;
}

bool ends_with_terminal(std::string_view s) {
  while (!s.empty() && is_closer(s.back())) s.remove_suffix(1);
  return !s.empty() && is_terminal(s.back());
}

// "1." or "a)" on its own is an enumeration label, not a sentence.
bool is_list_marker(std::string_view s) {
  static const std::regex marker(R"(^(\d{1,3}|[A-Za-z])[.)]$)");
  auto t = trim(s);
  return std::regex_match(t.begin(), t.end(), marker);
}

bool starts_with_any(std::string_view s, const std::vector<std::string>& needles) {
  auto t = trim(s);
  for (const auto& n : needles)
    if (!n.empty() && t.substr(0, n.size()) == n) return true;
  return false;
}

bool ends_with_any(std::string_view s, const std::vector<std::string>& needles) {
  auto t = trim(s);
  for (const auto& n : needles)
    if (!n.empty() && t.size() >= n.size() && t.substr(t.size() - n.size()) == n) return true;
  return false;
}

bool starts_with_bullet(std::string_view s) {
  auto t = trim(s);
  return t.substr(0, 3) == "\xE2\x80\xA2";  // U+2022
}

enum class Match { yes, no, need_more };

// Incremental match of ^\s*Step\s*\d+\s*: against a growing prefix.
Match match_step(std::string_view s, bool complete) {
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  const std::string_view word = "Step";
  for (char c : word) {
    if (i == s.size()) return complete ? Match::no : Match::need_more;
    if (s[i] != c) return Match::no;
    ++i;
  }
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  std::size_t digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    ++i;
    ++digits;
  }
  if (i == s.size()) return complete ? Match::no : Match::need_more;
  if (digits == 0) return Match::no;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  if (i == s.size()) return complete ? Match::no : Match::need_more;
  return s[i] == ':' ? Match::yes : Match::no;
}

}  // namespace

SpanSegmenter::SpanSegmenter(SegmenterOptions options) : options_(std::move(options)) {}

SpanSegmenter::Decision SpanSegmenter::decide(bool at_end) const {
  const std::string& cur = pending_.front();
  if (released_ == 0) return Decision::none;
  if (whitespace_only(cur)) return Decision::none;

  // Rules that close after the previous token.
  const std::string& prev = prev_text_;
  if (options_.newlines && ends_with_newline(prev)) return Decision::boundary;
  if (ends_with_any(prev, options_.close_delimiters)) return Decision::boundary;
  if (options_.sentences && !is_list_marker(open_text_)) {
    if (has_inner_sentence_end(prev)) return Decision::boundary;
    if (ends_with_terminal(prev) && !cur.empty() && is_space(cur.front()))
      return Decision::boundary;
  }

  // Rules that open a span at this token.
  if (options_.newlines && starts_with_newline(cur)) return Decision::boundary;
  if (starts_with_any(cur, options_.open_delimiters)) return Decision::boundary;
  if (options_.bullets && starts_with_bullet(cur)) return Decision::boundary;
  if (options_.step_markers) {
    std::string joined;
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      joined += pending_[i];
      Match m = match_step(joined, false);
      if (m == Match::yes) return Decision::boundary;
      if (m == Match::no) return Decision::none;
    }
    Match m = match_step(joined, at_end);
    if (m == Match::need_more) return Decision::undecided;
    return m == Match::yes ? Decision::boundary : Decision::none;
  }
  return Decision::none;
}

Span SpanSegmenter::close_span(std::uint32_t end) {
  Span span;
  span.start = open_start_;
  span.end = end;
  auto label = trim(open_text_);
  span.label = std::string(label.substr(0, 64));
  open_start_ = end;
  open_text_.clear();
  return span;
}

void SpanSegmenter::drain(bool at_end, std::vector<SegmentEvent>& out) {
  while (!pending_.empty()) {
    Decision d = decide(at_end);
    if (d == Decision::undecided) break;
    if (d == Decision::boundary) {
      SegmentEvent ev;
      ev.kind = SegmentEvent::Kind::span_closed;
      ev.span = close_span(released_);
      out.push_back(std::move(ev));
    }
    SegmentEvent tok;
    tok.kind = SegmentEvent::Kind::token;
    tok.token = released_++;
    out.push_back(tok);
    open_text_ += pending_.front();
    prev_text_ = std::move(pending_.front());
    pending_.pop_front();
  }
}

std::vector<SegmentEvent> SpanSegmenter::push(std::string_view token) {
  if (finished_) throw Error(ErrorKind::invalid_argument, "segmenter already finished");
  pending_.emplace_back(token);
  ++next_;
  std::vector<SegmentEvent> out;
  drain(false, out);
  return out;
}

std::vector<SegmentEvent> SpanSegmenter::finish() {
  std::vector<SegmentEvent> out;
  if (finished_) return out;
  drain(true, out);
  if (released_ > open_start_) {
    SegmentEvent ev;
    ev.kind = SegmentEvent::Kind::span_closed;
    ev.span = close_span(released_);
    out.push_back(std::move(ev));
  }
  finished_ = true;
  return out;
}

std::vector<Span> segment_spans(std::span<const std::string> tokens,
                                const SegmenterOptions& options) {
  SpanSegmenter seg(options);
  std::vector<Span> spans;
  auto collect = [&](const std::vector<SegmentEvent>& events) {
    for (const auto& e : events)
      if (e.kind == SegmentEvent::Kind::span_closed) spans.push_back(e.span);
  };
  for (const auto& t : tokens) collect(seg.push(t));
  collect(seg.finish());
  return spans;
}

}  // namespace attrstream
