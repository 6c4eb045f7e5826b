#include "hmdref/cloud_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmdref/rng.hpp"

namespace hmdref {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
    throw Error(ErrorCode::ParseError,
                path.string() + ":" + std::to_string(line) + ": " + what);
}

// Coordinates are stored as float32; 9 significant digits round-trip exactly.
void print_float(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", to_float32(v));
    out += buf;
}

struct LineReader {
    std::istream& in;
    const std::filesystem::path& path;
    int line_no = 0;

    bool next(std::string& line) {
        if (!std::getline(in, line)) return false;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }

    std::string expect() {
        std::string line;
        if (!next(line)) parse_fail(path, line_no + 1, "unexpected end of file");
        return line;
    }
};

bool parse_three_doubles(const std::string& line, double& x, double& y, double& z) {
    const char* s = line.c_str();
    char* end = nullptr;
    x = std::strtod(s, &end);
    if (end == s) return false;
    s = end;
    y = std::strtod(s, &end);
    if (end == s) return false;
    s = end;
    z = std::strtod(s, &end);
    if (end == s) return false;
    while (*end != '\0') {
        if (!std::isspace(static_cast<unsigned char>(*end))) return false;
        ++end;
    }
    return true;
}

// The vertex columns are declared float32, so stored values are quantized to
// float on read; this is what makes save/load round trips exact.
Point3 as_float_point(double x, double y, double z) {
    return {to_float32(x), to_float32(y), to_float32(z)};
}

struct PlyHeader {
    std::size_t vertex_count = 0;
    std::size_t face_count = 0;
    std::vector<std::string> vertex_properties;
};

PlyHeader read_ply_header(LineReader& reader) {
    PlyHeader header;
    if (reader.expect() != "ply") parse_fail(reader.path, reader.line_no, "missing 'ply' magic");
    if (reader.expect() != "format ascii 1.0")
        parse_fail(reader.path, reader.line_no, "only 'format ascii 1.0' is supported");

    std::string current_element;
    std::string line;
    while (true) {
        line = reader.expect();
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "comment" || word == "obj_info") continue;
        if (word == "element") {
            std::size_t count = 0;
            ss >> current_element >> count;
            if (current_element == "vertex") header.vertex_count = count;
            else if (current_element == "face") header.face_count = count;
            else parse_fail(reader.path, reader.line_no, "unsupported element '" + current_element + "'");
            continue;
        }
        if (word == "property") {
            if (current_element == "vertex") {
                std::string type, name;
                ss >> type;
                if (type == "list") parse_fail(reader.path, reader.line_no, "list property on vertex");
                ss >> name;
                header.vertex_properties.push_back(name);
            }
            continue;  // face list property accepted as-is
        }
        parse_fail(reader.path, reader.line_no, "unrecognized header line '" + line + "'");
    }
    return header;
}

}  // namespace

double TriangleMesh::triangle_area(std::size_t i) const {
    const auto& t = triangles[i];
    const Point3& a = vertices[t[0]];
    const Point3& b = vertices[t[1]];
    const Point3& c = vertices[t[2]];
    return 0.5 * (b - a).cross(c - a).norm();
}

double TriangleMesh::total_area() const {
    double area = 0.0;
    for (std::size_t i = 0; i < triangles.size(); ++i) area += triangle_area(i);
    return area;
}

PointCloud load_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    LineReader reader{in, path};
    PointCloud cloud;

    const std::string ext = lower_ext(path);
    if (ext == ".ply") {
        const PlyHeader header = read_ply_header(reader);
        // x y z must be the leading properties; extra scalar columns are ignored.
        if (header.vertex_properties.size() < 3 || header.vertex_properties[0] != "x" ||
            header.vertex_properties[1] != "y" || header.vertex_properties[2] != "z")
            parse_fail(path, reader.line_no, "vertex properties must start with x y z");
        const bool strict = header.vertex_properties.size() == 3;
        cloud.points.reserve(header.vertex_count);
        for (std::size_t i = 0; i < header.vertex_count; ++i) {
            const std::string line = reader.expect();
            double x, y, z;
            if (strict) {
                if (!parse_three_doubles(line, x, y, z))
                    parse_fail(path, reader.line_no, "expected 3 coordinates, got '" + line + "'");
            } else {
                std::istringstream ss(line);
                if (!(ss >> x >> y >> z))
                    parse_fail(path, reader.line_no, "expected 3 coordinates, got '" + line + "'");
            }
            cloud.points.push_back(as_float_point(x, y, z));
        }
        return cloud;
    }
    if (ext == ".pcd") {
        std::string line;
        std::size_t count = 0;
        bool in_data = false;
        while (!in_data) {
            line = reader.expect();
            std::istringstream ss(line);
            std::string key;
            ss >> key;
            if (key == "#" || key.empty() || key[0] == '#') continue;
            if (key == "FIELDS") {
                std::string f1, f2, f3;
                ss >> f1 >> f2 >> f3;
                if (f1 != "x" || f2 != "y" || f3 != "z")
                    parse_fail(path, reader.line_no, "FIELDS must be x y z");
            } else if (key == "POINTS") {
                ss >> count;
            } else if (key == "DATA") {
                std::string mode;
                ss >> mode;
                if (mode != "ascii") parse_fail(path, reader.line_no, "only DATA ascii is supported");
                in_data = true;
            }
            // VERSION/SIZE/TYPE/COUNT/WIDTH/HEIGHT/VIEWPOINT pass through
        }
        cloud.points.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            line = reader.expect();
            double x, y, z;
            if (!parse_three_doubles(line, x, y, z))
                parse_fail(path, reader.line_no, "expected 3 coordinates, got '" + line + "'");
            cloud.points.push_back(as_float_point(x, y, z));
        }
        return cloud;
    }
    throw Error(ErrorCode::InvalidArgument, "unsupported cloud extension '" + ext + "'");
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    std::string body;
    body.reserve(cloud.size() * 32);
    for (const auto& p : cloud.points) {
        print_float(body, p.x());
        body += ' ';
        print_float(body, p.y());
        body += ' ';
        print_float(body, p.z());
        body += '\n';
    }

    std::string header;
    const std::string ext = lower_ext(path);
    if (ext == ".ply") {
        header = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                 "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    } else if (ext == ".pcd") {
        const std::string n = std::to_string(cloud.size());
        header = "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH " + n +
                 "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " + n + "\nDATA ascii\n";
    } else {
        throw Error(ErrorCode::InvalidArgument, "unsupported cloud extension '" + ext + "'");
    }

    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << header << body;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

TriangleMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    LineReader reader{in, path};
    const PlyHeader header = read_ply_header(reader);
    if (header.vertex_properties.size() < 3 || header.vertex_properties[0] != "x" ||
        header.vertex_properties[1] != "y" || header.vertex_properties[2] != "z")
        parse_fail(path, reader.line_no, "vertex properties must start with x y z");

    TriangleMesh mesh;
    mesh.vertices.reserve(header.vertex_count);
    for (std::size_t i = 0; i < header.vertex_count; ++i) {
        const std::string line = reader.expect();
        double x, y, z;
        std::istringstream ss(line);
        if (!(ss >> x >> y >> z))
            parse_fail(path, reader.line_no, "expected 3 coordinates, got '" + line + "'");
        mesh.vertices.push_back(as_float_point(x, y, z));
    }
    mesh.triangles.reserve(header.face_count);
    for (std::size_t i = 0; i < header.face_count; ++i) {
        const std::string line = reader.expect();
        std::istringstream ss(line);
        int n = 0;
        if (!(ss >> n) || n != 3) parse_fail(path, reader.line_no, "only triangle faces are supported");
        std::array<std::uint32_t, 3> tri{};
        for (auto& v : tri) {
            long long idx = -1;
            if (!(ss >> idx) || idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
                parse_fail(path, reader.line_no, "vertex index out of range");
            v = static_cast<std::uint32_t>(idx);
        }
        mesh.triangles.push_back(tri);
    }
    return mesh;
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nelement face "
        << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
    std::string body;
    for (const auto& v : mesh.vertices) {
        print_float(body, v.x());
        body += ' ';
        print_float(body, v.y());
        body += ' ';
        print_float(body, v.z());
        body += '\n';
    }
    for (const auto& t : mesh.triangles)
        body += "3 " + std::to_string(t[0]) + ' ' + std::to_string(t[1]) + ' ' +
                std::to_string(t[2]) + '\n';
    out << body;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

PointCloud sample_mesh(const TriangleMesh& mesh, const SamplingConfig& cfg) {
    if (cfg.sample_count < 1)
        throw Error(ErrorCode::InvalidArgument, "sample_count must be >= 1");
    std::vector<double> cumulative;
    cumulative.reserve(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        total += mesh.triangle_area(i);
        cumulative.push_back(total);
    }
    if (mesh.triangles.empty() || total <= 0.0)
        throw Error(ErrorCode::DegenerateMesh, "mesh has no positive-area triangles");

    Rng rng(cfg.rng_seed);
    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(cfg.sample_count));
    for (int s = 0; s < cfg.sample_count; ++s) {
        const double pick = uniform01(rng) * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        const std::size_t tri_idx =
            std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                  mesh.triangles.size() - 1);
        const auto& tri = mesh.triangles[tri_idx];
        const Point3& a = mesh.vertices[tri[0]];
        const Point3& b = mesh.vertices[tri[1]];
        const Point3& c = mesh.vertices[tri[2]];
        double u = uniform01(rng);
        double v = uniform01(rng);
        if (u + v > 1.0) {  // mirror into the triangle
            u = 1.0 - u;
            v = 1.0 - v;
        }
        cloud.points.push_back(a + u * (b - a) + v * (c - a));
    }
    return cloud;
}

TriangleMesh transform_mesh(const RigidTransform& t, const TriangleMesh& mesh) {
    TriangleMesh out;
    out.vertices.reserve(mesh.vertices.size());
    for (const auto& v : mesh.vertices) out.vertices.push_back(t.apply(v));
    out.triangles = mesh.triangles;
    return out;
}

void merge_mesh(TriangleMesh& base, const TriangleMesh& extra) {
    const auto offset = static_cast<std::uint32_t>(base.vertices.size());
    base.vertices.insert(base.vertices.end(), extra.vertices.begin(), extra.vertices.end());
    base.triangles.reserve(base.triangles.size() + extra.triangles.size());
    for (const auto& t : extra.triangles)
        base.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
}

}  // namespace hmdref
