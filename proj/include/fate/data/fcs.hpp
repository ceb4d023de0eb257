#pragma once

// Reader for list-mode FCS 3.0 / 3.1 files with float ("F") or unsigned
// integer ("I") data.
//
// Layout: a 58-byte ASCII HEADER holding the version and the inclusive byte
// offsets of the TEXT, DATA and ANALYSIS segments; a TEXT segment of
// delimiter-separated keyword/value pairs; a DATA segment of $TOT events x
// $PAR parameters packed in event order.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fate/data/csv.hpp"
#include "fate/errors.hpp"

namespace fate {

struct FcsHeader {
  std::string version;  // "FCS3.0" or "FCS3.1"
  std::uint64_t text_begin = 0, text_end = 0;
  std::uint64_t data_begin = 0, data_end = 0;
  std::uint64_t analysis_begin = 0, analysis_end = 0;
};

struct FcsTextSegment {
  char delimiter = '/';
  std::vector<std::pair<std::string, std::string>> keywords;  // file order, keys upper-cased

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : keywords) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

struct FcsFile {
  FcsHeader header;
  FcsTextSegment text;
  RawEventMatrix data;
  std::vector<std::string> warnings;
};

namespace fcs_detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::uint64_t parse_uint(std::string_view s, const char* kind, const std::string& what) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(kind, what + " is not a non-negative integer: '" + std::string(s) + "'");
  }
  return v;
}

inline FcsHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 58) throw ParseError("MalformedHeader", "file shorter than the 58-byte header");
  const std::string_view h(reinterpret_cast<const char*>(bytes.data()), 58);
  FcsHeader hdr;
  hdr.version = std::string(h.substr(0, 6));
  if (hdr.version != "FCS3.0" && hdr.version != "FCS3.1") {
    throw ParseError("MalformedHeader", "unsupported version tag '" + hdr.version + "'");
  }
  if (h.substr(6, 4) != "    ") throw ParseError("MalformedHeader", "bytes 6-9 must be spaces");
  std::uint64_t* fields[6] = {&hdr.text_begin, &hdr.text_end,     &hdr.data_begin,
                              &hdr.data_end,   &hdr.analysis_begin, &hdr.analysis_end};
  for (int i = 0; i < 6; ++i) {
    const std::string_view f = h.substr(10 + 8 * static_cast<std::size_t>(i), 8);
    const bool blank = f.find_first_not_of(' ') == std::string_view::npos;
    *fields[i] = blank ? 0 : parse_uint(f, "MalformedHeader", "header offset " + std::to_string(i));
  }
  if (hdr.text_begin < 58 || hdr.text_end <= hdr.text_begin) {
    throw ParseError("MalformedHeader", "TEXT segment offsets " + std::to_string(hdr.text_begin) +
                                            ".." + std::to_string(hdr.text_end));
  }
  if (hdr.text_end >= bytes.size()) {
    throw ParseError("MalformedHeader", "TEXT segment ends past the end of the file");
  }
  return hdr;
}

/// Splits the TEXT segment on its delimiter; a doubled delimiter stands for
/// one literal delimiter character.
inline FcsTextSegment parse_text(std::string_view seg) {
  FcsTextSegment text;
  text.delimiter = seg.front();
  const char d = text.delimiter;
  std::vector<std::string> tokens;
  std::string cur;
  std::size_t i = 1;
  bool closed = false;
  while (i < seg.size()) {
    const char c = seg[i];
    if (c == d) {
      if (i + 1 < seg.size() && seg[i + 1] == d) {
        cur += d;
        i += 2;
        continue;
      }
      tokens.push_back(std::move(cur));
      cur.clear();
      closed = true;
      ++i;
      continue;
    }
    cur += c;
    closed = false;
    ++i;
  }
  if (!closed) {
    // Trailing bytes after the last delimiter are only tolerated when blank.
    if (cur.find_first_not_of(" \r\n\t") != std::string::npos || tokens.empty()) {
      throw ParseError("DelimiterError", "TEXT segment does not end with the delimiter");
    }
  }
  if (tokens.size() % 2 != 0) {
    throw ParseError("DelimiterError", "TEXT segment has a keyword without a value");
  }
  for (std::size_t k = 0; k < tokens.size(); k += 2) {
    if (tokens[k].empty()) throw ParseError("DelimiterError", "empty keyword in TEXT segment");
    std::string key = upper(tokens[k]);
    if (text.find(key)) throw ParseError("DuplicateKeyword", "keyword '" + key + "' repeats");
    text.keywords.emplace_back(std::move(key), std::move(tokens[k + 1]));
  }
  return text;
}

inline const std::string& required(const FcsTextSegment& t, const std::string& key) {
  const std::string* v = t.find(key);
  if (!v) throw ParseError("MalformedHeader", "missing required keyword " + key);
  return *v;
}

inline std::uint64_t read_uint(const std::uint8_t* p, int width, bool little) {
  std::uint64_t v = 0;
  for (int b = 0; b < width; ++b) {
    const std::uint64_t byte = p[little ? b : width - 1 - b];
    v |= byte << (8 * b);
  }
  return v;
}

}  // namespace fcs_detail

/// Decodes a complete FCS file image. Never reads outside `bytes`; every
/// failure surfaces as a ParseError.
inline FcsFile parse_fcs(std::span<const std::uint8_t> bytes) {
  using namespace fcs_detail;
  FcsFile out;
  out.header = parse_header(bytes);
  FcsHeader& hdr = out.header;
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  out.text = parse_text(all.substr(hdr.text_begin, hdr.text_end - hdr.text_begin + 1));
  const FcsTextSegment& text = out.text;

  const std::uint64_t par = parse_uint(required(text, "$PAR"), "MalformedHeader", "$PAR");
  const std::uint64_t tot = parse_uint(required(text, "$TOT"), "MalformedHeader", "$TOT");
  if (par < 1 || par > 100000) {
    throw ParseError("MalformedHeader", "$PAR must be between 1 and 100000");
  }
  if (const std::string* mode = text.find("$MODE"); mode && upper(*mode) != "L") {
    throw ParseError("UnsupportedFeature", "$MODE " + *mode + " (only list mode L is supported)");
  }
  const std::string datatype = upper(required(text, "$DATATYPE"));
  if (datatype != "F" && datatype != "I") {
    throw ParseError("UnsupportedFeature", "$DATATYPE " + datatype);
  }
  const std::string& byteord = required(text, "$BYTEORD");
  bool little;
  if (byteord == "1,2,3,4" || byteord == "1,2") {
    little = true;
  } else if (byteord == "4,3,2,1" || byteord == "2,1") {
    little = false;
  } else {
    throw ParseError("UnsupportedFeature", "$BYTEORD " + byteord);
  }
  if (text.find("$SPILLOVER") || text.find("$SPILL") || text.find("SPILL")) {
    out.warnings.push_back("spillover matrix present but not applied");
  }

  std::vector<int> widths(par);
  std::vector<std::uint64_t> masks(par, ~std::uint64_t{0});
  std::uint64_t event_bytes = 0;
  out.data.channels.resize(par);
  for (std::uint64_t p = 0; p < par; ++p) {
    const std::string idx = std::to_string(p + 1);
    out.data.channels[p].name = required(text, "$P" + idx + "N");
    if (const std::string* s = text.find("$P" + idx + "S")) out.data.channels[p].stain = *s;
    const std::string& b = required(text, "$P" + idx + "B");
    if (upper(b) == "*") throw ParseError("UnsupportedFeature", "variable-width $P" + idx + "B");
    const std::uint64_t bits = parse_uint(b, "MalformedHeader", "$P" + idx + "B");
    if (datatype == "F" && bits != 32) {
      throw ParseError("UnsupportedFeature", "DATATYPE F needs $PnB = 32, parameter " + idx +
                                                 " has " + std::to_string(bits));
    }
    if (bits != 8 && bits != 16 && bits != 32 && bits != 64) {
      throw ParseError("UnsupportedFeature", "$P" + idx + "B = " + std::to_string(bits));
    }
    widths[p] = static_cast<int>(bits / 8);
    event_bytes += bits / 8;
    if (datatype == "I") {
      if (const std::string* r = text.find("$P" + idx + "R")) {
        // Unused high bits are masked to the smallest power of two >= $PnR.
        const std::uint64_t range = parse_uint(*r, "MalformedHeader", "$P" + idx + "R");
        int used = 0;
        while (used < 64 && (std::uint64_t{1} << used) < range) ++used;
        if (used < static_cast<int>(bits) && range > 0) masks[p] = (std::uint64_t{1} << used) - 1;
      }
    }
  }

  std::uint64_t begin = hdr.data_begin, end = hdr.data_end;
  if (begin == 0 && end == 0) {
    if (const std::string* b = text.find("$BEGINDATA")) begin = parse_uint(*b, "MalformedHeader", "$BEGINDATA");
    if (const std::string* e = text.find("$ENDDATA")) end = parse_uint(*e, "MalformedHeader", "$ENDDATA");
  }
  const std::uint64_t needed = tot * event_bytes;
  if (tot != 0 && needed / tot != event_bytes) throw ParseError("MalformedHeader", "$TOT overflows");
  std::uint64_t available = 0;
  if (needed > 0) {
    if (begin == 0 || end < begin) {
      throw ParseError("MalformedHeader", "DATA segment offsets " + std::to_string(begin) + ".." +
                                              std::to_string(end));
    }
    if (begin < hdr.text_end + 1 && end >= hdr.text_begin) {
      throw ParseError("MalformedHeader", "DATA segment overlaps TEXT");
    }
    if (begin >= bytes.size()) {
      throw ParseError("TruncatedData", "DATA segment starts past the end of the file");
    }
    available = std::min<std::uint64_t>(end, bytes.size() - 1) - begin + 1;
    if (available < needed) {
      throw ParseError("TruncatedData", "DATA segment holds " + std::to_string(available) +
                                            " bytes, $TOT x $PAR needs " + std::to_string(needed));
    }
  }

  out.data.values.resize(static_cast<nn::Index>(tot), static_cast<nn::Index>(par));
  const std::uint8_t* p = bytes.data() + begin;
  for (std::uint64_t e = 0; e < tot; ++e) {
    for (std::uint64_t c = 0; c < par; ++c) {
      double v;
      if (datatype == "F") {
        const auto raw = static_cast<std::uint32_t>(read_uint(p, 4, little));
        float f;
        std::memcpy(&f, &raw, sizeof f);
        v = static_cast<double>(f);
        if (!std::isfinite(v)) {
          throw ParseError("NonFiniteValue", "event " + std::to_string(e + 1) + ", parameter " +
                                                 std::to_string(c + 1));
        }
      } else {
        v = static_cast<double>(read_uint(p, widths[c], little) & masks[c]);
      }
      out.data.values(static_cast<nn::Index>(e), static_cast<nn::Index>(c)) = v;
      p += widths[c];
    }
  }
  return out;
}

inline FcsFile parse_fcs(const std::string& bytes) {
  return parse_fcs(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()),
                                                 bytes.size()));
}

}  // namespace fate
