#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vdi/encoders.hpp"
#include "vdi/error.hpp"
#include "vdi/random.hpp"
#include "vdi/text_pipeline.hpp"

namespace vdi {

/// One (video, query, ground-truth moment) sample. Charades-STA lines carry
/// no duration; until one is attached it defaults to end_s.
struct TimedAnnotation {
  std::string video_id;
  text::QuerySentence query;
  double start_s = 0.0;
  double end_s = 0.0;
  double duration_s = 0.0;

  void validate() const {
    if (!(start_s >= 0.0 && start_s < end_s && end_s <= duration_s)) {
      throw InvalidBoundary("annotation for '" + video_id + "': need 0 <= start < end <= duration");
    }
  }
};

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(line_no, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

/// Parses Charades-STA annotation lines: `video_id start end##sentence`.
inline std::vector<TimedAnnotation> load_annotations(std::istream& in) {
  std::vector<TimedAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto sep = line.find("##");
    if (sep == std::string::npos) throw ParseError(line_no, "missing '##' separator");
    std::istringstream head(line.substr(0, sep));
    std::string id, start, end, extra;
    if (!(head >> id >> start >> end) || (head >> extra)) {
      throw ParseError(line_no, "expected 'video_id start end' before '##'");
    }
    TimedAnnotation a;
    a.video_id = id;
    a.start_s = parse_double(start, line_no);
    a.end_s = parse_double(end, line_no);
    if (!(a.start_s >= 0.0)) throw ParseError(line_no, "negative start time");
    if (!(a.start_s < a.end_s)) throw ParseError(line_no, "start must be before end");
    try {
      a.query = text::QuerySentence::parse(line.substr(sep + 2));
    } catch (const EmptyContent&) {
      throw ParseError(line_no, "empty query sentence");
    }
    a.duration_s = a.end_s;
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<TimedAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations '" + path.string() + "'");
  return load_annotations(in);
}

inline void write_annotations(std::ostream& out, const std::vector<TimedAnnotation>& anns) {
  for (const auto& a : anns) {
    out << a.video_id << ' ' << format_double(a.start_s) << ' ' << format_double(a.end_s)
        << "##" << a.query.raw << '\n';
  }
}

inline void write_annotations(const std::filesystem::path& path,
                              const std::vector<TimedAnnotation>& anns) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotations '" + path.string() + "'");
  write_annotations(out, anns);
}

// ---------------------------------------------------------------------------
// Videos

struct Video {
  std::string id;
  double duration_s = 0.0;
  std::vector<FramePayload> frames;
};

/// Sets duration_s of each annotation from its video; throws on unknown ids
/// or ground truth beyond the video end.
inline void attach_durations(std::vector<TimedAnnotation>& anns, const std::vector<Video>& videos) {
  std::map<std::string, double> durations;
  for (const auto& v : videos) durations[v.id] = v.duration_s;
  for (auto& a : anns) {
    auto it = durations.find(a.video_id);
    if (it == durations.end()) throw Error("annotation refers to unknown video '" + a.video_id + "'");
    a.duration_s = it->second;
    a.validate();
  }
}

inline nlohmann::json videos_to_json(const std::vector<Video>& videos) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : videos) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : v.frames) frames.push_back(f.cells);
    const Index h = v.frames.empty() ? 0 : v.frames.front().height;
    const Index w = v.frames.empty() ? 0 : v.frames.front().width;
    arr.push_back({{"id", v.id}, {"duration_s", v.duration_s}, {"height", h}, {"width", w},
                   {"frames", frames}});
  }
  return {{"videos", arr}};
}

inline std::vector<Video> videos_from_json(const nlohmann::json& j) {
  std::vector<Video> videos;
  try {
    for (const auto& jv : j.at("videos")) {
      Video v;
      v.id = jv.at("id").get<std::string>();
      v.duration_s = jv.at("duration_s").get<double>();
      const Index h = jv.at("height").get<Index>();
      const Index w = jv.at("width").get<Index>();
      for (const auto& jf : jv.at("frames")) {
        FramePayload f{h, w, jf.get<std::vector<std::int32_t>>()};
        if (static_cast<Index>(f.cells.size()) != h * w) {
          throw DimensionMismatch("video '" + v.id + "': frame size differs from height*width");
        }
        v.frames.push_back(std::move(f));
      }
      videos.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed videos file: ") + e.what());
  }
  return videos;
}

inline std::vector<Video> load_videos(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open videos '" + path.string() + "'");
  try {
    return videos_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("cannot parse '" + path.string() + "': " + e.what());
  }
}

inline void save_videos(const std::filesystem::path& path, const std::vector<Video>& videos) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write videos '" + path.string() + "'");
  out << videos_to_json(videos).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic moment-retrieval data

enum class Motion { right, left, up, down };

struct EventTemplate {
  std::string noun;
  std::string verb;
  std::int32_t object_id = 0;
  Motion motion = Motion::right;

  std::string query() const { return "the " + noun + " " + verb + "s"; }
  bool operator==(const EventTemplate&) const = default;
};

namespace detail {
inline constexpr std::string_view kNouns[] = {"ball", "box", "cup", "dog"};
inline constexpr std::string_view kVerbs[] = {"roll", "slide", "rise", "fall"};
inline constexpr Motion kMotions[] = {Motion::right, Motion::left, Motion::up, Motion::down};
inline constexpr std::int32_t kFirstClutterId = 5;
inline constexpr std::int32_t kClutterKinds = 4;
}  // namespace detail

inline EventTemplate make_template(std::size_t noun, std::size_t verb) {
  return {std::string(detail::kNouns[noun]), std::string(detail::kVerbs[verb]),
          static_cast<std::int32_t>(noun + 1), detail::kMotions[verb]};
}

struct SyntheticSpec {
  std::size_t num_videos = 50;
  Index frames_per_video = 16;
  std::size_t num_templates = 4;
  std::uint64_t seed = 1;
  Index grid = 4;
  double frame_seconds = 1.0;
  /// Draw events from the (noun, verb) pairs *not* in the training set.
  bool novel_combinations = false;
  /// Rotates which pairs form the training set.
  std::uint64_t template_seed = 0;
  Index min_event_frames = 3;
  /// 0 means frames_per_video / 2.
  Index max_event_frames = 0;
  /// Chance that the distractor event shares the target's noun, when the
  /// template pool allows it.
  double shared_noun_distractor = 0.5;
  std::string id_prefix = "v";

  void validate() const {
    if (num_videos == 0 || frames_per_video < 1 || num_templates == 0 || grid < 2) {
      throw ConfigError("synthetic spec: counts must be positive (grid >= 2)");
    }
    if (num_templates > 16) throw ConfigError("synthetic spec: at most 16 templates");
    const Index max_ev = max_event_frames == 0 ? frames_per_video / 2 : max_event_frames;
    if (min_event_frames < 1 || max_ev < min_event_frames || max_ev > frames_per_video) {
      throw ConfigError("synthetic spec: bad event length range");
    }
    if (!(frame_seconds > 0.0)) throw ConfigError("synthetic spec: frame_seconds must be positive");
  }
};

/// Training pairs: `num_templates` pairs taken diagonal by diagonal from the
/// 4 x 4 noun/verb grid, so every noun and verb appears once per diagonal.
inline std::vector<EventTemplate> seen_templates(std::size_t num_templates,
                                                 std::uint64_t template_seed) {
  std::vector<EventTemplate> out;
  for (std::size_t d = 0; out.size() < num_templates && d < 4; ++d) {
    const std::size_t shift = (template_seed + d) % 4;
    for (std::size_t k = 0; k < 4 && out.size() < num_templates; ++k) {
      out.push_back(make_template(k, (k + shift) % 4));
    }
  }
  return out;
}

inline std::vector<EventTemplate> novel_templates(std::size_t num_templates,
                                                  std::uint64_t template_seed) {
  const auto seen = seen_templates(num_templates, template_seed);
  std::vector<EventTemplate> out;
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t v = 0; v < 4; ++v) {
      auto t = make_template(n, v);
      if (std::find(seen.begin(), seen.end(), t) == seen.end()) out.push_back(t);
    }
  }
  return out;
}

struct SyntheticDataset {
  std::vector<Video> videos;
  std::vector<TimedAnnotation> annotations;
  std::vector<EventTemplate> templates;
};

namespace detail {

inline void place_event(std::vector<FramePayload>& frames, Index first, Index count,
                        const EventTemplate& t, Index grid, Rng& rng) {
  const Index fixed = rng.range(0, static_cast<int>(grid - 1));
  for (Index k = 0; k < count; ++k) {
    const double p = count == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(count - 1);
    const auto along = static_cast<Index>(std::lround(p * static_cast<double>(grid - 1)));
    Index r = fixed, c = fixed;
    switch (t.motion) {
      case Motion::right: c = along; break;
      case Motion::left: c = grid - 1 - along; break;
      case Motion::up: r = grid - 1 - along; break;
      case Motion::down: r = along; break;
    }
    auto& f = frames[static_cast<std::size_t>(first + k)];
    f.cells[static_cast<std::size_t>(r * grid + c)] = t.object_id;
  }
}

}  // namespace detail

/// Videos of `frames_per_video` frames, each with one planted target event
/// (a noun object moving as its verb dictates) and, when room allows, one
/// distractor event from a different template in a disjoint range. Every
/// frame also carries random clutter. The query names the target event and
/// the ground truth is its frame range. Fully determined by spec.seed.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.templates = spec.novel_combinations ? novel_templates(spec.num_templates, spec.template_seed)
                                         : seen_templates(spec.num_templates, spec.template_seed);
  Rng rng(hash_combine(spec.seed, spec.novel_combinations ? 0x4e4f56ULL : 0x534545ULL));
  const Index l = spec.frames_per_video;
  const Index g = spec.grid;
  const Index max_ev = spec.max_event_frames == 0 ? l / 2 : spec.max_event_frames;
  const auto& pool = ds.templates;

  for (std::size_t v = 0; v < spec.num_videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%04zu", spec.id_prefix.c_str(), v);
    Video video{id, static_cast<double>(l) * spec.frame_seconds, {}};
    for (Index t = 0; t < l; ++t) {
      FramePayload f{g, g, std::vector<std::int32_t>(static_cast<std::size_t>(g * g), 0)};
      const int clutter = rng.range(1, 2);
      for (int k = 0; k < clutter; ++k) {
        const auto cell = rng.below(static_cast<std::uint64_t>(g * g));
        f.cells[cell] = detail::kFirstClutterId +
                        static_cast<std::int32_t>(rng.below(detail::kClutterKinds));
      }
      video.frames.push_back(std::move(f));
    }

    const EventTemplate& target = pool[rng.below(pool.size())];
    const Index len = rng.range(static_cast<int>(spec.min_event_frames), static_cast<int>(max_ev));
    const Index start = rng.range(0, static_cast<int>(l - len));
    detail::place_event(video.frames, start, len, target, g, rng);

    // Distractor in the longer free stretch, if any fits.
    const Index before = start, after = l - (start + len);
    const Index room = std::max(before, after);
    std::vector<const EventTemplate*> same_noun, other;
    for (const auto& t : pool) {
      if (t == target) continue;
      (t.noun == target.noun ? same_noun : other).push_back(&t);
    }
    if (room >= spec.min_event_frames && (!same_noun.empty() || !other.empty())) {
      const bool use_same = !same_noun.empty() &&
                            (other.empty() || rng.uniform() < spec.shared_noun_distractor);
      const auto& choices = use_same ? same_noun : other;
      const EventTemplate& distractor = *choices[rng.below(choices.size())];
      const Index dlen = rng.range(static_cast<int>(spec.min_event_frames),
                                   static_cast<int>(std::min(room, max_ev)));
      const Index dstart = before >= after ? rng.range(0, static_cast<int>(before - dlen))
                                           : start + len + rng.range(0, static_cast<int>(after - dlen));
      detail::place_event(video.frames, dstart, dlen, distractor, g, rng);
    }

    TimedAnnotation a;
    a.video_id = video.id;
    a.query = text::QuerySentence::parse(target.query());
    a.start_s = static_cast<double>(start) * spec.frame_seconds;
    a.end_s = static_cast<double>(start + len) * spec.frame_seconds;
    a.duration_s = video.duration_s;
    a.validate();
    ds.annotations.push_back(std::move(a));
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

}  // namespace vdi
