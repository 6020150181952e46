#pragma once

// The pulse-sequence DSL: a line-oriented grammar for multi-channel on/off
// programs, compiled to edge timelines.
//
//   channels laser, mw, gate
//   sweep tau = 2ns .. 150ns step 2ns      # or: sweep tau = {2ns, 50ns}
//   block laser on 3000ns
//   block laser off tau
//   repeat 8 {
//     block laser on 3000ns
//     block laser off tau
//   }
//
// Statements end at a newline or ';'. Each channel runs its own clock:
// block durations accumulate per channel, so independent channels are laid
// out with explicit off-padding. Units: ns, us.

#include <map>
#include <string>
#include <vector>

#include "spinshelve/types.hpp"

namespace spinshelve {

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, int line_arg, int col_arg)
      : std::runtime_error("line " + std::to_string(line_arg) + ", col " +
                           std::to_string(col_arg) + ": " + what),
        line(line_arg),
        col(col_arg) {}
  int line;
  int col;
};

struct SweepDecl {
  std::string name;
  bool is_list = false;
  double start_ns = 0.0, stop_ns = 0.0, step_ns = 0.0;  // range form
  std::vector<double> values_ns;                        // list form
  std::vector<double> values() const;  // expands the range form

  bool operator==(const SweepDecl&) const = default;
};

struct SeqItem {
  enum Kind { kBlock, kRepeat } kind = kBlock;
  // kBlock
  std::string channel;
  bool on = false;
  bool duration_is_var = false;
  double duration_ns = 0.0;
  std::string duration_var;
  // kRepeat
  int repeat_count = 1;
  std::vector<SeqItem> body;

  bool operator==(const SeqItem&) const = default;
};

struct SequenceSpec {
  std::vector<std::string> channels;
  std::vector<SweepDecl> sweeps;
  std::vector<SeqItem> items;

  bool has_channel(const std::string& name) const;
  const SweepDecl* find_sweep(const std::string& name) const;

  bool operator==(const SequenceSpec&) const = default;
};

struct TimelineEdge {
  double t_ns = 0.0;
  bool on = false;

  bool operator==(const TimelineEdge&) const = default;
};

struct Timeline {
  std::map<std::string, std::vector<TimelineEdge>> channels;
  double total_duration_ns = 0.0;
  double resolution_ns = 1.0;
  std::vector<std::string> warnings;  // sub-resolution snaps and the like

  void validate() const;
};

using Bindings = std::map<std::string, double>;  // variable -> ns

SequenceSpec parse_sequence(const std::string& text);

// Canonical text form; parse(print(spec)) is structurally equal to spec.
std::string print_sequence(const SequenceSpec& spec);

// Unrolls repeats, binds variables, accumulates per-channel block boundaries
// and snaps them to the resolution grid (round half up).
Timeline compile_sequence(const SequenceSpec& spec, const Bindings& bindings,
                          double resolution_ns = 1.0);

// One timeline per sweep value, in order. base_bindings supplies any other
// variables the spec needs.
std::vector<std::pair<Bindings, Timeline>> expand_sweep(
    const SequenceSpec& spec, const std::string& var,
    const std::vector<double>& values_ns, const Bindings& base_bindings = {},
    double resolution_ns = 1.0);

// Fraction of the total duration the channel spends on.
double duty_cycle(const Timeline& timeline, const std::string& channel);

// {channel: [[t_ns, "on"|"off"], ...]} per the export schema.
std::string timeline_to_json(const Timeline& timeline);

}  // namespace spinshelve
