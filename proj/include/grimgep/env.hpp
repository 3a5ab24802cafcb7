#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "grimgep/image.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

enum class Room : std::uint8_t { Start = 0, Object = 1, Tv = 2 };

enum class Entity : std::uint8_t { Gripper = 0, MovableObject = 1, TvOff = 2, TvOn = 3, StartMarkers = 4 };

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

inline double linf(const Vec2& a, const Vec2& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

inline double l2(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Full simulator state. Positions are room-local in [0,1]^2. tv_pattern_seed
// is only consulted while tv_on; the object lives in the Object room only.
struct EnvState {
  Room room = Room::Start;
  Vec2 gripper_pos;
  bool gripper_closed = false;
  Vec2 object_pos;
  bool holding = false;
  bool tv_on = false;
  std::uint32_t tv_pattern_seed = 0;
  int background_variant = 0;

  bool operator==(const EnvState&) const = default;
};

struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double grip = -1.0;  // >= 0 closes the gripper, < 0 opens it
};

struct GoalSpec {
  Vec2 gripper_target;
  Vec2 object_target;
  Image image;
};

struct EnvParams {
  int image_size = 24;
  double max_step = 0.1;        // per-axis movement clamp
  double grab_radius = 0.15;
  double tv_radius = 0.15;
  double doorway_width = 0.2;   // band centered on the shared wall
  double tv_resample_prob = 0.1;
};

// Three-room 2D world: TV room -- Start room -- Object room, joined west to
// east through doorway bands. The agent drags a gripper around, can grab the
// movable object in the Object room, and can switch on a TV whose screen then
// shows an uncontrollable random pattern. Rendering is a pure function of the
// state, and all kinematics are deterministic; the only random draws happen
// while the TV is on.
class Environment {
 public:
  explicit Environment(EnvParams params = {}) : p_(params) {}

  const EnvParams& params() const { return p_; }

  EnvState reset(std::uint64_t seed) const {
    EnvState s;
    s.room = Room::Start;
    s.gripper_pos = {0.5, 0.5};
    s.gripper_closed = false;
    s.object_pos = {0.5, 0.5};
    s.holding = false;
    s.tv_on = false;
    // Mixed but unconsulted while the TV is off; gives episodes distinct
    // pattern streams without affecting any rendered pixel at reset.
    Rng r(seed ^ 0x7c0ffee1234beefull);
    s.tv_pattern_seed = static_cast<std::uint32_t>(r.next_u64() >> 32);
    s.background_variant = 0;
    return s;
  }

  // One simulator tick. Order: clamp action, move/clamp or cross a doorway,
  // resolve carried object, grab/release on the closing edge, TV switch-on on
  // the closing edge, then the distractor coin if the TV was already on.
  // Draw order while the TV is on is fixed so replays are reproducible.
  EnvState step(const EnvState& state, const Action& action, Rng& rng) const {
    EnvState s = state;
    const double dx = std::clamp(action.dx, -p_.max_step, p_.max_step);
    const double dy = std::clamp(action.dy, -p_.max_step, p_.max_step);
    const double grip = std::clamp(action.grip, -1.0, 1.0);
    const bool new_closed = grip >= 0.0;
    const bool closing_edge = new_closed && !s.gripper_closed;
    const bool tv_was_on = s.tv_on;

    const Room old_room = s.room;
    double y = std::clamp(s.gripper_pos.y + dy, 0.0, 1.0);
    double x = s.gripper_pos.x + dx;
    const bool in_band = std::abs(y - 0.5) <= p_.doorway_width * 0.5;
    if (x > 1.0) {
      Room east = east_of(s.room);
      if (east != s.room && in_band) {
        s.room = east;
        x -= 1.0;
      } else {
        x = 1.0;
      }
    } else if (x < 0.0) {
      Room west = west_of(s.room);
      if (west != s.room && in_band) {
        s.room = west;
        x += 1.0;
      } else {
        x = 0.0;
      }
    }
    s.gripper_pos = {x, y};

    if (s.holding) {
      if (s.room != old_room) {
        // The object never leaves the Object room: crossing a doorway while
        // carrying drops it at the boundary point.
        s.holding = false;
        s.object_pos = {0.0, y};
      } else {
        s.object_pos = s.gripper_pos;
      }
    }

    if (closing_edge && !s.holding && s.room == Room::Object &&
        l2(s.gripper_pos, s.object_pos) <= p_.grab_radius) {
      s.holding = true;
      s.object_pos = s.gripper_pos;
    }
    if (!new_closed && s.holding) {
      s.holding = false;  // object stays where it was released
    }

    if (closing_edge && s.room == Room::Tv && !s.tv_on &&
        l2(s.gripper_pos, tv_center()) <= p_.tv_radius) {
      s.tv_on = true;  // stays on until reset
      s.tv_pattern_seed = static_cast<std::uint32_t>(rng.next_u64() >> 32);
      s.background_variant = static_cast<int>(rng.below(5));
    }

    if (tv_was_on && rng.uniform() < p_.tv_resample_prob) {
      s.tv_pattern_seed = static_cast<std::uint32_t>(rng.next_u64() >> 32);
      s.background_variant = static_cast<int>(rng.below(5));
    }

    s.gripper_closed = new_closed;
    return s;
  }

  Image render(const EnvState& s) const {
    const int n = p_.image_size;
    Image img(n, n);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        Color c = pixel_color(s, x, y);
        img.at(y, x, 0) = c.r;
        img.at(y, x, 1) = c.g;
        img.at(y, x, 2) = c.b;
      }
    }
    return img;
  }

  // Equals downsample2_flatten(render(s)) exactly, but only evaluates pixels
  // in cells that some sprite touches; the rest is the background fill. This
  // is the hot path behind the per-epoch embedding tables.
  std::vector<double> render_downsampled(const EnvState& s) const {
    const int n = p_.image_size;
    const int half = n / 2;
    std::vector<double> out(static_cast<std::size_t>(half) * half * 3);
    Color bg = background_color(s);
    for (std::size_t i = 0; i + 2 < out.size(); i += 3) {
      out[i] = static_cast<double>(bg.r);
      out[i + 1] = static_cast<double>(bg.g);
      out[i + 2] = static_cast<double>(bg.b);
    }
    std::array<PixelRect, 8> rects{};
    int n_rects = collect_rects(s, rects);
    std::vector<std::uint8_t> touched(static_cast<std::size_t>(half) * half, 0);
    for (int ri = 0; ri < n_rects; ++ri) {
      const PixelRect& r = rects[ri];
      for (int cy = r.y0 / 2; cy <= (r.y1 - 1) / 2; ++cy) {
        for (int cx = r.x0 / 2; cx <= (r.x1 - 1) / 2; ++cx) {
          touched[static_cast<std::size_t>(cy) * half + cx] = 1;
        }
      }
    }
    for (int cy = 0; cy < half; ++cy) {
      for (int cx = 0; cx < half; ++cx) {
        if (!touched[static_cast<std::size_t>(cy) * half + cx]) continue;
        double r = 0.0, g = 0.0, b = 0.0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            Color c = pixel_color(s, 2 * cx + sx, 2 * cy + sy);
            r += static_cast<double>(c.r);
            g += static_cast<double>(c.g);
            b += static_cast<double>(c.b);
          }
        }
        std::size_t base = (static_cast<std::size_t>(cy) * half + cx) * 3;
        out[base] = r * 0.25;
        out[base + 1] = g * 0.25;
        out[base + 2] = b * 0.25;
      }
    }
    return out;
  }

  // Compact, collision-free identifier of everything render() can see. Two
  // states with equal keys render to the same image, which lets callers share
  // per-image work (embeddings, densities) across duplicate observations.
  std::uint64_t render_key(const EnvState& s) const {
    const int gx = cell(s.gripper_pos.x);
    const int gy = cell(s.gripper_pos.y);
    const bool show_object = s.room == Room::Object;
    const bool show_tv = s.room == Room::Tv;
    const int ox = show_object ? cell(s.object_pos.x) : 0;
    const int oy = show_object ? cell(s.object_pos.y) : 0;
    const int bg = show_tv ? s.background_variant : 0;
    const bool tv_on = show_tv && s.tv_on;
    const std::uint64_t seed = tv_on ? s.tv_pattern_seed : 0;
    std::uint64_t key = static_cast<std::uint64_t>(s.room);
    key |= static_cast<std::uint64_t>(gx) << 2;
    key |= static_cast<std::uint64_t>(gy) << 8;
    key |= static_cast<std::uint64_t>(ox) << 14;
    key |= static_cast<std::uint64_t>(oy) << 20;
    key |= static_cast<std::uint64_t>(bg) << 26;
    key |= static_cast<std::uint64_t>(tv_on ? 1 : 0) << 29;
    key |= seed << 30;
    return key;
  }

  // The 25 evaluation goals: the Cartesian product of the five canonical
  // locations for the gripper and the object, staged in the Object room with
  // the TV off.
  std::vector<GoalSpec> build_test_set() const {
    std::vector<GoalSpec> out;
    out.reserve(25);
    for (const Vec2& g : canonical_locations()) {
      for (const Vec2& o : canonical_locations()) {
        GoalSpec spec;
        spec.gripper_target = g;
        spec.object_target = o;
        spec.image = render(goal_state(spec));
        out.push_back(std::move(spec));
      }
    }
    return out;
  }

  // Synthetic state a test goal depicts.
  EnvState goal_state(const GoalSpec& goal) const {
    EnvState s;
    s.room = Room::Object;
    s.gripper_pos = goal.gripper_target;
    s.object_pos = goal.object_target;
    s.gripper_closed = false;
    s.holding = false;
    s.tv_on = false;
    s.tv_pattern_seed = 0;
    s.background_variant = 0;
    return s;
  }

  bool evaluate_success(const GoalSpec& goal, const EnvState& final_state) const {
    if (final_state.room != Room::Object) return false;
    return linf(final_state.gripper_pos, goal.gripper_target) < 0.2 &&
           linf(final_state.object_pos, goal.object_target) < 0.2;
  }

  static std::set<Entity> visible_entities(const EnvState& s) {
    std::set<Entity> out;
    out.insert(Entity::Gripper);
    switch (s.room) {
      case Room::Start:
        out.insert(Entity::StartMarkers);
        break;
      case Room::Object:
        out.insert(Entity::MovableObject);
        break;
      case Room::Tv:
        out.insert(s.tv_on ? Entity::TvOn : Entity::TvOff);
        break;
    }
    return out;
  }

  // f1 of a predicted entity set against a ground-truth set. Precision and
  // recall are 0 on empty denominators, and f1 is 0 when both vanish.
  static double f1_score(const std::set<Entity>& truth, const std::set<Entity>& seen) {
    std::size_t hits = 0;
    for (Entity e : seen) {
      if (truth.count(e)) ++hits;
    }
    double precision = seen.empty() ? 0.0 : static_cast<double>(hits) / seen.size();
    double recall = truth.empty() ? 0.0 : static_cast<double>(hits) / truth.size();
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
  }

  // f1 of the final state's visible set against the goal's, goal as truth.
  static double f1_visible(const EnvState& goal_state, const EnvState& final_state) {
    return f1_score(visible_entities(goal_state), visible_entities(final_state));
  }

  static const std::array<Vec2, 5>& canonical_locations() {
    static const std::array<Vec2, 5> locs = {
        Vec2{0.5, 0.5}, Vec2{0.2, 0.8}, Vec2{0.8, 0.8}, Vec2{0.2, 0.2}, Vec2{0.8, 0.2}};
    return locs;
  }

  static Vec2 tv_center() { return {0.5, 0.5}; }

 private:
  struct Color {
    float r, g, b;  // float end-to-end: render() stores floats, and keeping
                    // the constants float-rounded here lets the downsampled
                    // fast path reproduce render() bit-for-bit
  };
  struct PixelRect {
    int x0, x1, y0, y1;  // [x0,x1) x [y0,y1)
  };

  static Room east_of(Room r) {
    if (r == Room::Tv) return Room::Start;
    if (r == Room::Start) return Room::Object;
    return r;
  }
  static Room west_of(Room r) {
    if (r == Room::Object) return Room::Start;
    if (r == Room::Start) return Room::Tv;
    return r;
  }

  int cell(double v) const {
    int n = p_.image_size;
    int c = static_cast<int>(v * n);
    return std::clamp(c, 0, n - 1);
  }

  Color background_color(const EnvState& s) const {
    switch (s.room) {
      case Room::Start:
        return {0.55f, 0.60f, 0.72f};
      case Room::Object:
        return {0.20f, 0.48f, 0.22f};
      case Room::Tv:
      default: {
        // Five mild variants of one base tone: visibly different, but close
        // enough that switching them moves the scene far less than changing
        // rooms does.
        static const std::array<Color, 5> palette = {
            Color{0.46f, 0.26f, 0.26f}, Color{0.50f, 0.28f, 0.24f}, Color{0.44f, 0.30f, 0.28f},
            Color{0.48f, 0.24f, 0.30f}, Color{0.42f, 0.28f, 0.24f}};
        return palette[static_cast<std::size_t>(s.background_variant) % 5];
      }
    }
  }

  PixelRect sprite_rect(const Vec2& pos) const {
    int cx = cell(pos.x);
    int cy = cell(pos.y);
    int n = p_.image_size;
    return {std::max(cx - 1, 0), std::min(cx + 2, n), std::max(cy - 1, 0), std::min(cy + 2, n)};
  }

  PixelRect tv_rect() const {
    // Sized relative to the canvas; 10x8 px on the default 24x24.
    int n = p_.image_size;
    int x0 = (n * 7) / 24;
    int x1 = (n * 17) / 24;
    int y0 = (n * 8) / 24;
    int y1 = (n * 16) / 24;
    return {x0, x1, y0, y1};
  }

  PixelRect doorway_rect(bool east) const {
    int n = p_.image_size;
    double half_band = p_.doorway_width * 0.5;
    int y0 = n, y1 = 0;
    for (int y = 0; y < n; ++y) {
      double center = (y + 0.5) / n;
      if (std::abs(center - 0.5) <= half_band) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y + 1);
      }
    }
    if (east) return {n - 2, n, y0, y1};
    return {0, 2, y0, y1};
  }

  static bool contains(const PixelRect& r, int x, int y) {
    return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
  }

  // Uncontrollable screen content keyed by the pattern seed: a random base
  // color over the whole screen (drawn from a continuous palette, so no two
  // "shows" ever repeat) plus a coarse per-block perturbation that gives the
  // frame texture. All values are 10-bit fractions, hence exactly
  // representable in float, which the downsampled fast path relies on.
  Color tv_pattern_color(std::uint32_t seed, int x, int y) const {
    Rng base_rng((static_cast<std::uint64_t>(seed) << 20) ^ 0x51ed0badull);
    std::uint64_t base_bits = base_rng.next_u64();
    PixelRect tv = tv_rect();
    int bw = std::max(1, (tv.x1 - tv.x0) / 2);
    int bh = std::max(1, (tv.y1 - tv.y0) / 2);
    std::uint64_t bx = static_cast<std::uint64_t>((x - tv.x0) / bw);
    std::uint64_t by = static_cast<std::uint64_t>((y - tv.y0) / bh);
    Rng block_rng((static_cast<std::uint64_t>(seed) << 20) ^ (bx << 10) ^ by ^ 0xb10cc01ull);
    std::uint64_t block_bits = block_rng.next_u64();
    auto channel = [](std::uint64_t base_byte, std::uint64_t block_byte) {
      float base = static_cast<float>(base_byte) * (1.0f / 256.0f);
      float offset = (static_cast<float>(block_byte) - 128.0f) * (1.0f / 1024.0f);
      return std::clamp(base + offset, 0.0f, 1.0f);
    };
    return {channel((base_bits >> 16) & 0xff, (block_bits >> 16) & 0xff),
            channel((base_bits >> 32) & 0xff, (block_bits >> 32) & 0xff),
            channel((base_bits >> 48) & 0xff, (block_bits >> 48) & 0xff)};
  }

  Color pixel_color(const EnvState& s, int x, int y) const {
    if (contains(sprite_rect(s.gripper_pos), x, y)) {
      return {0.95f, 0.95f, 0.97f};
    }
    if (s.room == Room::Object && contains(sprite_rect(s.object_pos), x, y)) {
      return {0.90f, 0.30f, 0.10f};
    }
    if (s.room == Room::Tv && contains(tv_rect(), x, y)) {
      if (s.tv_on) return tv_pattern_color(s.tv_pattern_seed, x, y);
      return {0.03f, 0.03f, 0.03f};
    }
    if (s.room == Room::Start) {
      // Fixed corner markers so the start room has its own signature.
      if ((x >= 2 && x < 4 && y >= 2 && y < 4) ||
          (x >= p_.image_size - 4 && x < p_.image_size - 2 && y >= 2 && y < 4)) {
        return {0.92f, 0.80f, 0.12f};
      }
    }
    bool has_east = east_of(s.room) != s.room;
    bool has_west = west_of(s.room) != s.room;
    if (has_east && contains(doorway_rect(true), x, y)) return {0.08f, 0.08f, 0.08f};
    if (has_west && contains(doorway_rect(false), x, y)) return {0.08f, 0.08f, 0.08f};
    return background_color(s);
  }

  int collect_rects(const EnvState& s, std::array<PixelRect, 8>& out) const {
    int n = 0;
    out[n++] = sprite_rect(s.gripper_pos);
    if (s.room == Room::Object) out[n++] = sprite_rect(s.object_pos);
    if (s.room == Room::Tv) out[n++] = tv_rect();
    if (s.room == Room::Start) {
      out[n++] = {2, 4, 2, 4};
      out[n++] = {p_.image_size - 4, p_.image_size - 2, 2, 4};
    }
    if (east_of(s.room) != s.room) out[n++] = doorway_rect(true);
    if (west_of(s.room) != s.room) out[n++] = doorway_rect(false);
    return n;
  }

  EnvParams p_;
};

}  // namespace grimgep
