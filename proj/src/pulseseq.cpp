#include "spinshelve/pulseseq.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace spinshelve {

namespace {

struct Token {
  std::string text;
  int line;
  int col;
  bool eol = false;  // statement separator (newline or ';')
};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return is_ident_start(c) || std::isdigit(static_cast<unsigned char>(c)); }

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto push_eol = [&]() {
    if (!out.empty() && !out.back().eol) out.push_back({"", line, col, true});
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      push_eol();
      ++line;
      col = 1;
      ++i;
      continue;
    }
    if (c == ';') {
      push_eol();
      ++col;
      ++i;
      continue;
    }
    if (c == '#') {  // comment to end of line
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++col;
      ++i;
      continue;
    }
    const int tok_col = col;
    if (is_ident_start(c)) {
      std::string t;
      while (i < text.size() && is_ident_char(text[i])) {
        t += text[i++];
        ++col;
      }
      out.push_back({t, line, tok_col, false});
      continue;
    }
    const bool dot_number = c == '.' && i + 1 < text.size() &&
                            std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if (std::isdigit(static_cast<unsigned char>(c)) || dot_number ||
        ((c == '+' || c == '-') && i + 1 < text.size() &&
         (std::isdigit(static_cast<unsigned char>(text[i + 1])) || text[i + 1] == '.'))) {
      // number, optionally with an attached unit suffix (split into two
      // tokens so "3000ns" and "3000 ns" parse alike)
      std::string num;
      while (i < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.' ||
              text[i] == '+' || text[i] == '-' || text[i] == 'e' || text[i] == 'E')) {
        // stop at unit suffix: "ns"/"us" directly after digits
        if ((text[i] == 'e' || text[i] == 'E') && i + 1 < text.size() &&
            !(std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
              text[i + 1] == '+' || text[i + 1] == '-')) {
          break;
        }
        num += text[i++];
        ++col;
      }
      out.push_back({num, line, tok_col, false});
      if (i < text.size() && is_ident_start(text[i])) {
        const int unit_col = col;
        std::string unit;
        while (i < text.size() && is_ident_char(text[i])) {
          unit += text[i++];
          ++col;
        }
        out.push_back({unit, line, unit_col, false});
      }
      continue;
    }
    // single-character punctuation
    out.push_back({std::string(1, c), line, tok_col, false});
    ++col;
    ++i;
  }
  push_eol();
  return out;
}

class Parser {
 public:
  explicit Parser(const std::string& text) : tokens_(tokenize(text)) {}

  SequenceSpec parse() {
    SequenceSpec spec;
    skip_eol();
    while (!at_end()) {
      parse_statement(spec, spec.items, /*top_level=*/true);
      skip_eol();
    }
    if (spec.channels.empty() && spec.items.empty() && spec.sweeps.empty()) {
      throw ParseError("empty sequence", 1, 1);
    }
    check_references(spec);
    return spec;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    const Token& t = at_end() ? tokens_.back() : tokens_[pos_];
    throw ParseError(msg, t.line, t.col);
  }

  bool at_end() const { return pos_ >= tokens_.size(); }
  const Token& peek() const { return tokens_[pos_]; }
  Token next() {
    if (at_end()) fail("unexpected end of input");
    return tokens_[pos_++];
  }
  void skip_eol() {
    while (!at_end() && tokens_[pos_].eol) ++pos_;
  }
  bool peek_is(const std::string& s) const {
    return !at_end() && !peek().eol && peek().text == s;
  }
  void expect(const std::string& s) {
    if (at_end() || peek().eol || peek().text != s) {
      fail("expected '" + s + "'");
    }
    ++pos_;
  }

  double parse_number() {
    if (at_end() || peek().eol) fail("expected a number");
    const Token t = next();
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(t.text, &used);
    } catch (const std::exception&) {
      throw ParseError("expected a number, got '" + t.text + "'", t.line, t.col);
    }
    if (used != t.text.size()) {
      throw ParseError("malformed number '" + t.text + "'", t.line, t.col);
    }
    return value;
  }

  double parse_duration_value() {
    const double value = parse_number();
    if (at_end() || peek().eol) fail("missing time unit (ns or us)");
    const Token unit = next();
    if (unit.text == "ns") return value;
    if (unit.text == "us") return value * 1000.0;
    throw ParseError("unknown time unit '" + unit.text + "'", unit.line, unit.col);
  }

  std::string parse_identifier(const char* what) {
    if (at_end() || peek().eol) fail(std::string("expected ") + what);
    const Token t = next();
    if (t.text.empty() || !is_ident_start(t.text[0])) {
      throw ParseError(std::string("expected ") + what + ", got '" + t.text + "'",
                       t.line, t.col);
    }
    static const std::vector<std::string> keywords = {
        "channels", "sweep", "block", "repeat", "on", "off", "step"};
    if (std::find(keywords.begin(), keywords.end(), t.text) != keywords.end()) {
      throw ParseError("keyword '" + t.text + "' cannot be used as " + what,
                       t.line, t.col);
    }
    return t.text;
  }

  void parse_statement(SequenceSpec& spec, std::vector<SeqItem>& items,
                       bool top_level) {
    if (at_end()) return;
    const Token head = peek();
    if (head.text == "channels") {
      if (!top_level) fail("'channels' must appear at top level");
      ++pos_;
      spec.channels.push_back(parse_identifier("a channel name"));
      while (peek_is(",")) {
        ++pos_;
        spec.channels.push_back(parse_identifier("a channel name"));
      }
      end_statement();
      return;
    }
    if (head.text == "sweep") {
      if (!top_level) fail("'sweep' must appear at top level");
      ++pos_;
      SweepDecl decl;
      decl.name = parse_identifier("a sweep variable name");
      expect("=");
      if (peek_is("{")) {
        ++pos_;
        decl.is_list = true;
        decl.values_ns.push_back(parse_duration_value());
        while (peek_is(",")) {
          ++pos_;
          decl.values_ns.push_back(parse_duration_value());
        }
        expect("}");
      } else {
        decl.start_ns = parse_duration_value();
        expect(".");
        expect(".");
        decl.stop_ns = parse_duration_value();
        expect("step");
        decl.step_ns = parse_duration_value();
        if (!(decl.step_ns > 0.0)) fail("sweep step must be > 0");
        if (decl.stop_ns < decl.start_ns) fail("sweep stop must be >= start");
      }
      spec.sweeps.push_back(std::move(decl));
      end_statement();
      return;
    }
    if (head.text == "block") {
      ++pos_;
      SeqItem item;
      item.kind = SeqItem::kBlock;
      item.channel = parse_identifier("a channel name");
      if (peek_is("on")) {
        item.on = true;
        ++pos_;
      } else if (peek_is("off")) {
        item.on = false;
        ++pos_;
      } else {
        fail("expected 'on' or 'off'");
      }
      if (!at_end() && !peek().eol && is_ident_start(peek().text[0]) &&
          peek().text != "on" && peek().text != "off") {
        item.duration_is_var = true;
        item.duration_var = parse_identifier("a duration variable");
      } else {
        item.duration_ns = parse_duration_value();
        if (!(item.duration_ns > 0.0)) fail("block duration must be > 0");
      }
      items.push_back(std::move(item));
      end_statement();
      return;
    }
    if (head.text == "repeat") {
      ++pos_;
      SeqItem item;
      item.kind = SeqItem::kRepeat;
      const double count = parse_number();
      if (count < 1.0 || count != std::floor(count)) {
        fail("repeat count must be a positive integer");
      }
      item.repeat_count = static_cast<int>(count);
      expect("{");
      skip_eol();
      while (!peek_is("}")) {
        if (at_end()) fail("unterminated repeat block, missing '}'");
        parse_statement(spec, item.body, /*top_level=*/false);
        skip_eol();
      }
      expect("}");
      items.push_back(std::move(item));
      end_statement();
      return;
    }
    fail("expected 'channels', 'sweep', 'block' or 'repeat', got '" +
         head.text + "'");
  }

  void end_statement() {
    if (at_end()) return;
    if (peek().eol) {
      ++pos_;
      return;
    }
    if (peek_is("}")) return;  // single-line repeat bodies
    fail("unexpected token '" + peek().text + "' after statement");
  }

  void check_references(const SequenceSpec& spec) const {
    check_items(spec, spec.items);
  }

  void check_items(const SequenceSpec& spec,
                   const std::vector<SeqItem>& items) const {
    for (const auto& item : items) {
      if (item.kind == SeqItem::kRepeat) {
        check_items(spec, item.body);
        continue;
      }
      if (!spec.has_channel(item.channel)) {
        throw ParseError("undeclared channel '" + item.channel + "'", 1, 1);
      }
      if (item.duration_is_var && !spec.find_sweep(item.duration_var)) {
        throw ParseError("undeclared variable '" + item.duration_var + "'", 1, 1);
      }
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::string format_ns(double t_ns) {
  // whole-ns values print as integers, everything else keeps precision
  std::ostringstream os;
  if (t_ns == std::floor(t_ns) && std::abs(t_ns) < 1e15) {
    os << static_cast<long long>(t_ns) << "ns";
  } else {
    os.precision(12);
    os << t_ns << "ns";
  }
  return os.str();
}

void print_items(std::ostringstream& os, const std::vector<SeqItem>& items,
                 int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  for (const auto& item : items) {
    if (item.kind == SeqItem::kRepeat) {
      os << pad << "repeat " << item.repeat_count << " {\n";
      print_items(os, item.body, indent + 1);
      os << pad << "}\n";
      continue;
    }
    os << pad << "block " << item.channel << (item.on ? " on " : " off ");
    if (item.duration_is_var) {
      os << item.duration_var;
    } else {
      os << format_ns(item.duration_ns);
    }
    os << "\n";
  }
}

}  // namespace

std::vector<double> SweepDecl::values() const {
  if (is_list) return values_ns;
  std::vector<double> out;
  for (double v = start_ns; v <= stop_ns + 1e-9; v += step_ns) {
    out.push_back(v);
  }
  return out;
}

bool SequenceSpec::has_channel(const std::string& name) const {
  return std::find(channels.begin(), channels.end(), name) != channels.end();
}

const SweepDecl* SequenceSpec::find_sweep(const std::string& name) const {
  for (const auto& s : sweeps) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void Timeline::validate() const {
  for (const auto& [name, edges] : channels) {
    bool state = false;
    double prev = -1.0;
    for (const auto& e : edges) {
      if (!(e.t_ns > prev) && !(prev < 0.0)) {
        throw ParameterError("timeline edges for channel '" + name +
                             "' are not strictly increasing");
      }
      const double snapped =
          std::floor(e.t_ns / resolution_ns + 0.5) * resolution_ns;
      if (std::abs(snapped - e.t_ns) > 1e-9) {
        throw ParameterError("timeline edge off the resolution grid");
      }
      if (e.on == state) {
        throw ParameterError("timeline edges for channel '" + name +
                             "' do not alternate");
      }
      state = e.on;
      prev = e.t_ns;
    }
  }
}

SequenceSpec parse_sequence(const std::string& text) {
  return Parser(text).parse();
}

std::string print_sequence(const SequenceSpec& spec) {
  std::ostringstream os;
  if (!spec.channels.empty()) {
    os << "channels ";
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      if (i) os << ", ";
      os << spec.channels[i];
    }
    os << "\n";
  }
  for (const auto& s : spec.sweeps) {
    os << "sweep " << s.name << " = ";
    if (s.is_list) {
      os << "{";
      for (std::size_t i = 0; i < s.values_ns.size(); ++i) {
        if (i) os << ", ";
        os << format_ns(s.values_ns[i]);
      }
      os << "}";
    } else {
      os << format_ns(s.start_ns) << " .. " << format_ns(s.stop_ns) << " step "
         << format_ns(s.step_ns);
    }
    os << "\n";
  }
  print_items(os, spec.items, 0);
  return os.str();
}

namespace {

void unroll(const SequenceSpec& spec, const std::vector<SeqItem>& items,
            const Bindings& bindings,
            std::map<std::string, double>& channel_clock,
            std::map<std::string, std::vector<std::pair<double, bool>>>& raw) {
  for (const auto& item : items) {
    if (item.kind == SeqItem::kRepeat) {
      for (int r = 0; r < item.repeat_count; ++r) {
        unroll(spec, item.body, bindings, channel_clock, raw);
      }
      continue;
    }
    double duration = item.duration_ns;
    if (item.duration_is_var) {
      auto it = bindings.find(item.duration_var);
      if (it == bindings.end()) {
        throw ParameterError("unbound variable '" + item.duration_var + "'");
      }
      duration = it->second;
    }
    if (!(duration > 0.0)) {
      throw ParameterError("block duration for channel '" + item.channel +
                           "' must be > 0 after binding");
    }
    const double start = channel_clock[item.channel];
    raw[item.channel].push_back({start, item.on});
    channel_clock[item.channel] = start + duration;
  }
}

}  // namespace

Timeline compile_sequence(const SequenceSpec& spec, const Bindings& bindings,
                          double resolution_ns) {
  if (!(resolution_ns > 0.0)) throw ParameterError("resolution must be > 0");
  std::map<std::string, double> clock;
  std::map<std::string, std::vector<std::pair<double, bool>>> raw;
  for (const auto& ch : spec.channels) raw[ch];  // declared channels always appear
  unroll(spec, spec.items, bindings, clock, raw);

  Timeline tl;
  tl.resolution_ns = resolution_ns;
  auto snap = [&](double t) {
    return std::floor(t / resolution_ns + 0.5) * resolution_ns;  // half up
  };
  double total = 0.0;
  for (auto& [channel, blocks] : raw) {
    // Emit transitions at snapped block boundaries, then the closing off
    // edge at the channel's end.
    std::vector<TimelineEdge> edges;
    bool state = false;
    for (const auto& [start, on] : blocks) {
      if (on == state) continue;
      const double t = snap(start);
      if (std::abs(t - start) > 1e-9) {
        std::ostringstream os;
        os << "channel '" << channel << "': edge at " << start
           << " ns snapped to " << t << " ns";
        tl.warnings.push_back(os.str());
      }
      edges.push_back({t, on});
      state = on;
    }
    if (state) {
      const double t_end = snap(clock[channel]);
      edges.push_back({t_end, false});
    }
    // Zero-width pulses collapse after snapping; drop the degenerate pair.
    std::vector<TimelineEdge> cleaned;
    for (const auto& e : edges) {
      if (!cleaned.empty() && cleaned.back().t_ns == e.t_ns) {
        tl.warnings.push_back("channel '" + channel +
                              "': zero-width pulse removed after snapping");
        cleaned.pop_back();
        continue;
      }
      cleaned.push_back(e);
    }
    total = std::max(total, snap(clock[channel]));
    tl.channels[channel] = std::move(cleaned);
  }
  tl.total_duration_ns = total;
  tl.validate();
  return tl;
}

std::vector<std::pair<Bindings, Timeline>> expand_sweep(
    const SequenceSpec& spec, const std::string& var,
    const std::vector<double>& values_ns, const Bindings& base_bindings,
    double resolution_ns) {
  if (!spec.find_sweep(var)) {
    throw ParameterError("variable '" + var + "' is not declared as a sweep");
  }
  if (values_ns.empty()) {
    throw ParameterError("sweep over '" + var + "' has no values");
  }
  std::vector<std::pair<Bindings, Timeline>> out;
  out.reserve(values_ns.size());
  for (double v : values_ns) {
    Bindings b = base_bindings;
    b[var] = v;
    out.emplace_back(b, compile_sequence(spec, b, resolution_ns));
  }
  return out;
}

double duty_cycle(const Timeline& timeline, const std::string& channel) {
  auto it = timeline.channels.find(channel);
  if (it == timeline.channels.end()) {
    throw ParameterError("unknown channel '" + channel + "'");
  }
  if (!(timeline.total_duration_ns > 0.0)) return 0.0;
  double on_time = 0.0;
  double on_since = -1.0;
  for (const auto& e : it->second) {
    if (e.on) {
      on_since = e.t_ns;
    } else if (on_since >= 0.0) {
      on_time += e.t_ns - on_since;
      on_since = -1.0;
    }
  }
  if (on_since >= 0.0) on_time += timeline.total_duration_ns - on_since;
  return on_time / timeline.total_duration_ns;
}

std::string timeline_to_json(const Timeline& timeline) {
  nlohmann::ordered_json j;
  for (const auto& [name, edges] : timeline.channels) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : edges) {
      arr.push_back({e.t_ns, e.on ? "on" : "off"});
    }
    j[name] = std::move(arr);
  }
  return j.dump(2) + "\n";
}

}  // namespace spinshelve
