#pragma once

// MetaImage (.mha) reader/writer: ASCII "Key = Value" header terminated by
// "ElementDataFile = LOCAL", followed by the raw little-endian payload.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

static_assert(std::endian::native == std::endian::little, "MetaImage payload handling assumes a little-endian host");

enum class ElementType { met_uchar, met_short, met_float, met_double };

inline std::string_view element_type_name(ElementType t)
{
    switch (t) {
    case ElementType::met_uchar: return "MET_UCHAR";
    case ElementType::met_short: return "MET_SHORT";
    case ElementType::met_float: return "MET_FLOAT";
    case ElementType::met_double: return "MET_DOUBLE";
    }
    return "MET_FLOAT";
}

inline std::size_t element_size(ElementType t)
{
    switch (t) {
    case ElementType::met_uchar: return 1;
    case ElementType::met_short: return 2;
    case ElementType::met_float: return 4;
    case ElementType::met_double: return 8;
    }
    return 4;
}

/// Shortest representation that parses back to the same double.
inline std::string format_real(double x)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<double> parse_reals(const std::string& value, const std::string& key, int line)
{
    std::vector<double> out;
    const char* p = value.data();
    const char* end = value.data() + value.size();
    while (p < end) {
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
        if (p == end) break;
        double x = 0;
        auto res = std::from_chars(p, end, x);
        if (res.ec != std::errc{})
            throw ParseError("metaimage: malformed value for key '" + key + "' on line " + std::to_string(line));
        out.push_back(x);
        p = res.ptr;
        if (p < end && *p != ' ' && *p != '\t')
            throw ParseError("metaimage: malformed value for key '" + key + "' on line " + std::to_string(line));
    }
    return out;
}

inline std::vector<double> expect_reals(const std::string& value, const std::string& key, int line, std::size_t n)
{
    auto v = parse_reals(value, key, line);
    if (v.size() != n)
        throw ParseError("metaimage: key '" + key + "' on line " + std::to_string(line) + " expects " +
                         std::to_string(n) + " values");
    return v;
}

inline bool parse_bool(const std::string& value, const std::string& key, int line)
{
    if (value == "True" || value == "true" || value == "1") return true;
    if (value == "False" || value == "false" || value == "0") return false;
    throw ParseError("metaimage: malformed boolean for key '" + key + "' on line " + std::to_string(line));
}

template <class T>
void widen_payload(const std::vector<char>& raw, std::vector<float>& out)
{
    const std::size_t n = raw.size() / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        T x;
        std::memcpy(&x, raw.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<float>(x);
    }
}

} // namespace detail

/// Header fields as read from disk, for callers that care about the stored element type.
struct MetaImageHeader {
    Geometry geometry;
    int channels = 1;
    ElementType element_type = ElementType::met_float;
};

inline Volume load_mha(const std::filesystem::path& path, MetaImageHeader* header_out = nullptr)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("metaimage: cannot open '" + path.string() + "'");

    Geometry g;
    int channels = 1;
    ElementType type = ElementType::met_float;
    bool have_dims = false, have_type = false, have_ndims = false, have_object = false;
    bool terminated = false, have_spacing = false;
    std::string raw_line;
    int line = 0;
    while (std::getline(in, raw_line)) {
        ++line;
        const std::string text = detail::trim(raw_line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ParseError("metaimage: malformed header line " + std::to_string(line) + " in '" + path.string() +
                             "' (expected 'Key = Value')");
        const std::string key = detail::trim(std::string_view(text).substr(0, eq));
        const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
        if (key.empty()) throw ParseError("metaimage: empty key on line " + std::to_string(line));

        if (key == "ObjectType") {
            if (value != "Image")
                throw UnsupportedError("metaimage: ObjectType '" + value + "' on line " + std::to_string(line));
            have_object = true;
        } else if (key == "NDims") {
            const auto v = detail::expect_reals(value, key, line, 1);
            if (v[0] != 3) throw UnsupportedError("metaimage: only NDims = 3 is supported (line " + std::to_string(line) + ")");
            have_ndims = true;
        } else if (key == "DimSize") {
            const auto v = detail::expect_reals(value, key, line, 3);
            for (int a = 0; a < 3; ++a) {
                if (v[a] < 1 || v[a] != std::floor(v[a]))
                    throw ParseError("metaimage: DimSize on line " + std::to_string(line) + " must hold positive integers");
                g.dims[a] = static_cast<int>(v[a]);
            }
            have_dims = true;
        } else if (key == "ElementSpacing" || key == "ElementSize") {
            const auto v = detail::expect_reals(value, key, line, 3);
            if (key == "ElementSpacing" || !have_spacing)
                for (int a = 0; a < 3; ++a) g.spacing[a] = v[a];
            have_spacing = have_spacing || key == "ElementSpacing";
        } else if (key == "Offset" || key == "Origin" || key == "Position") {
            const auto v = detail::expect_reals(value, key, line, 3);
            for (int a = 0; a < 3; ++a) g.origin[a] = v[a];
        } else if (key == "TransformMatrix" || key == "Rotation" || key == "Orientation") {
            const auto v = detail::expect_reals(value, key, line, 9);
            // Stored as the three axis direction vectors in turn.
            for (int c = 0; c < 3; ++c)
                for (int r = 0; r < 3; ++r) g.direction[r][c] = v[3 * c + r];
        } else if (key == "ElementNumberOfChannels") {
            const auto v = detail::expect_reals(value, key, line, 1);
            if (v[0] < 1 || v[0] != std::floor(v[0]))
                throw ParseError("metaimage: ElementNumberOfChannels on line " + std::to_string(line) + " must be a positive integer");
            channels = static_cast<int>(v[0]);
        } else if (key == "ElementType") {
            if (value == "MET_UCHAR") type = ElementType::met_uchar;
            else if (value == "MET_SHORT") type = ElementType::met_short;
            else if (value == "MET_FLOAT") type = ElementType::met_float;
            else if (value == "MET_DOUBLE") type = ElementType::met_double;
            else throw UnsupportedError("metaimage: unsupported ElementType '" + value + "' on line " + std::to_string(line));
            have_type = true;
        } else if (key == "CompressedData") {
            if (detail::parse_bool(value, key, line))
                throw UnsupportedError("metaimage: compressed payloads are not supported ('" + path.string() + "')");
        } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
            if (detail::parse_bool(value, key, line))
                throw UnsupportedError("metaimage: big-endian payloads are not supported ('" + path.string() + "')");
        } else if (key == "ElementDataFile") {
            if (value != "LOCAL")
                throw UnsupportedError("metaimage: only ElementDataFile = LOCAL is supported (line " + std::to_string(line) + ")");
            terminated = true;
            break;
        }
        // Other keys (BinaryData, AnatomicalOrientation, CenterOfRotation, ...) carry no geometry.
    }
    if (!terminated) throw ParseError("metaimage: header of '" + path.string() + "' lacks ElementDataFile = LOCAL");
    if (!have_object) throw ParseError("metaimage: missing key 'ObjectType' in '" + path.string() + "'");
    if (!have_ndims) throw ParseError("metaimage: missing key 'NDims' in '" + path.string() + "'");
    if (!have_dims) throw ParseError("metaimage: missing key 'DimSize' in '" + path.string() + "'");
    if (!have_type) throw ParseError("metaimage: missing key 'ElementType' in '" + path.string() + "'");
    try {
        g.validate();
    } catch (const ValidationError& e) {
        throw ParseError(std::string("metaimage: invalid geometry in '") + path.string() + "': " + e.what());
    }

    const std::size_t expected = g.voxel_count() * static_cast<std::size_t>(channels) * element_size(type);
    std::vector<char> raw(expected);
    in.read(raw.data(), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != expected)
        throw TruncationError("metaimage: payload of '" + path.string() + "' has " + std::to_string(got) +
                              " bytes, header requires " + std::to_string(expected));
    if (in.peek() != std::char_traits<char>::eof())
        throw TruncationError("metaimage: payload of '" + path.string() + "' is longer than the header requires (" +
                              std::to_string(expected) + " bytes)");

    std::vector<float> data;
    Semantics sem = Semantics::normalized;
    switch (type) {
    case ElementType::met_uchar: detail::widen_payload<std::uint8_t>(raw, data); sem = Semantics::label; break;
    case ElementType::met_short: detail::widen_payload<std::int16_t>(raw, data); sem = Semantics::hu; break;
    case ElementType::met_float: detail::widen_payload<float>(raw, data); break;
    case ElementType::met_double: detail::widen_payload<double>(raw, data); break;
    }
    if (channels > 1) sem = Semantics::feature;
    Volume v(g, channels, std::move(data), sem);
    if (!v.all_finite()) throw ValidationError("metaimage: '" + path.string() + "' contains NaN or Inf values");
    if (header_out) *header_out = MetaImageHeader{g, channels, type};
    return v;
}

/// Header text exactly as write_mha emits it.
inline std::string mha_header(const Geometry& g, int channels, ElementType type)
{
    std::ostringstream h;
    const auto join3 = [](const auto& a) { return format_real(a[0]) + " " + format_real(a[1]) + " " + format_real(a[2]); };
    h << "ObjectType = Image\n";
    h << "NDims = 3\n";
    h << "DimSize = " << g.dims[0] << " " << g.dims[1] << " " << g.dims[2] << "\n";
    h << "ElementType = " << element_type_name(type) << "\n";
    h << "ElementSpacing = " << join3(g.spacing) << "\n";
    h << "Offset = " << join3(g.origin) << "\n";
    h << "TransformMatrix =";
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) h << " " << format_real(g.direction[r][c]);
    h << "\n";
    if (channels > 1) h << "ElementNumberOfChannels = " << channels << "\n";
    h << "CompressedData = False\n";
    h << "ElementDataFile = LOCAL\n";
    return h.str();
}

/// Writes an uncompressed MetaImage. Integer element types round to nearest
/// and must fit the type's range.
inline void write_mha(const Volume& v, const std::filesystem::path& path, ElementType type = ElementType::met_float)
{
    if (!v.all_finite()) throw ValidationError("metaimage: refusing to write NaN/Inf data to '" + path.string() + "'");
    const auto data = v.data();
    std::vector<char> raw(data.size() * element_size(type));
    auto store_int = [&](auto tag, double lo, double hi) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double r = std::nearbyint(static_cast<double>(data[i]));
            if (r < lo || r > hi)
                throw ValidationError("metaimage: value " + format_real(data[i]) + " out of range for " +
                                      std::string(element_type_name(type)));
            const T x = static_cast<T>(r);
            std::memcpy(raw.data() + i * sizeof(T), &x, sizeof(T));
        }
    };
    switch (type) {
    case ElementType::met_uchar: store_int(std::uint8_t{}, 0, 255); break;
    case ElementType::met_short: store_int(std::int16_t{}, -32768, 32767); break;
    case ElementType::met_float: std::memcpy(raw.data(), data.data(), raw.size()); break;
    case ElementType::met_double:
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double x = data[i];
            std::memcpy(raw.data() + i * 8, &x, 8);
        }
        break;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("metaimage: cannot open '" + path.string() + "' for writing");
    const std::string header = mha_header(v.geometry(), v.channels(), type);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("metaimage: write failed for '" + path.string() + "'");
}

} // namespace sctreg
