#include "voxin/netspec.hpp"

#include <sstream>
#include <vector>

namespace vx {
namespace {

// strips the '#' comment and splits on whitespace
std::vector<std::string> tokenize(std::string line) {
  const auto hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  std::vector<std::string> tokens;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

i64 number(const std::string& tok, i64 line) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("trailing characters");
    return static_cast<i64>(v);
  } catch (const ParseError&) {
    throw;
  } catch (...) {
    throw ParseError(line, "expected a number, got '" + tok + "'");
  }
}

i64 extent(const std::string& tok, i64 line) {
  const i64 v = number(tok, line);
  if (v < 1) throw ParseError(line, "extent must be >= 1");
  return v;
}

// one or three extents from tokens[first..]; returns how many were consumed
vec3 extents(const std::vector<std::string>& tokens, std::size_t first, std::size_t count,
             i64 line, const char* what) {
  if (count == 1) {
    return vec3::cube(extent(tokens[first], line));
  }
  if (count == 3) {
    return vec3{extent(tokens[first], line), extent(tokens[first + 1], line),
                extent(tokens[first + 2], line)};
  }
  throw ParseError(line, std::string(what));
}

}  // namespace

NetworkSpec parse_network_spec(const std::string& text) {
  NetworkSpec net;
  bool saw_input = false;
  i64 line_no = 0;

  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    ++line_no;
    const std::vector<std::string> tokens = tokenize(line);
    if (tokens.empty()) continue;
    const std::string& kw = tokens[0];

    if (kw == "input") {
      if (saw_input) throw ParseError(line_no, "duplicate input declaration");
      if (!net.layers.empty()) throw ParseError(line_no, "input must precede the layers");
      if (tokens.size() != 2) throw ParseError(line_no, "input takes one feature count");
      net.features_in = number(tokens[1], line_no);
      if (net.features_in < 1) throw ParseError(line_no, "feature count must be >= 1");
      saw_input = true;
      continue;
    }
    if (!saw_input) throw ParseError(line_no, "missing input declaration");

    if (kw == "conv") {
      std::size_t n = tokens.size() - 1;
      Activation act = Activation::identity;
      if (n >= 1 && tokens.back() == "relu") {
        act = Activation::relu;
        --n;
      }
      if (n != 2 && n != 4)
        throw ParseError(line_no, "conv takes a feature count and one or three kernel extents");
      const i64 f_out = number(tokens[1], line_no);
      if (f_out < 1) throw ParseError(line_no, "feature count must be >= 1");
      const vec3 k = extents(tokens, 2, n - 1, line_no,
                             "conv takes a feature count and one or three kernel extents");
      net.layers.push_back(ConvSpec{f_out, k, act});
      continue;
    }

    if (kw == "pool") {
      std::size_t n = tokens.size() - 1;
      std::optional<PoolMode> mode;
      if (n >= 1) {
        const std::string& last = tokens.back();
        if (last == "mpf" || last == "plain" || last == "auto") {
          if (last == "mpf") mode = PoolMode::fragments;
          if (last == "plain") mode = PoolMode::plain;
          --n;
        }
      }
      const vec3 p =
          extents(tokens, 1, n, line_no, "pool takes one or three window extents");
      net.layers.push_back(PoolSpec{p, mode});
      continue;
    }

    throw ParseError(line_no, "unknown keyword '" + kw + "'");
  }

  if (!saw_input) throw ParseError(std::max<i64>(1, line_no), "missing input declaration");
  if (net.layers.empty())
    throw ParseError(std::max<i64>(1, line_no), "network needs at least one layer");
  net.validate();
  return net;
}

namespace {

void put_extents(std::ostringstream& out, const vec3& v) {
  if (v.x == v.y && v.y == v.z)
    out << v.x;
  else
    out << v.x << ' ' << v.y << ' ' << v.z;
}

}  // namespace

std::string format_network_spec(const NetworkSpec& net) {
  std::ostringstream out;
  out << "input " << net.features_in << '\n';
  for (const LayerSpec& layer : net.layers) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      out << "conv " << conv->features_out << ' ';
      put_extents(out, conv->kernel);
      if (conv->act == Activation::relu) out << " relu";
    } else {
      const auto& pool = std::get<PoolSpec>(layer);
      out << "pool ";
      put_extents(out, pool.window);
      if (pool.forced_mode)
        out << (*pool.forced_mode == PoolMode::fragments ? " mpf" : " plain");
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace vx
