#include "hmdref/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <sstream>

#include "hmdref/preprocess.hpp"

namespace hmdref {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'R', 'E', 'F', '1'};
constexpr std::size_t kMaxHeaderBytes = 1 << 20;        // 1 MiB of text is already absurd
constexpr std::size_t kMaxPayloadBytes = 512u << 20;    // caps a hostile point count

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_f32le(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32le(out, bits);
}

float read_f32le(const std::uint8_t* p) {
    const std::uint32_t bits = read_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void append_f64le(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

double read_f64le(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Header lines are "key value...\n"; returns key -> rest-of-line.
std::map<std::string, std::string> parse_header(const std::string& text) {
    std::map<std::string, std::string> fields;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos)
            fields[line] = "";
        else
            fields[line.substr(0, space)] = line.substr(space + 1);
    }
    return fields;
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == 0) throw std::invalid_argument(what);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::BadFrame, std::string("bad numeric field: ") + what);
    }
}

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::vector<std::uint8_t> encode_request(const ReferenceRequest& request) {
    const double half_yaw = request.seed.yaw / 2.0;
    std::ostringstream header;
    header << "version " << request.protocol_version << '\n';
    header << "algorithm " << to_string(request.algorithm) << '\n';
    header << "seed " << fmt_full(request.seed.position.x()) << ' '
           << fmt_full(request.seed.position.y()) << ' ' << fmt_full(request.seed.position.z())
           << " 0 0 " << fmt_full(std::sin(half_yaw)) << ' ' << fmt_full(std::cos(half_yaw))
           << '\n';
    header << "points " << request.cloud.size() << '\n';
    for (const auto& [key, value] : request.overrides) header << key << ' ' << value << '\n';
    const std::string header_text = header.str();

    std::vector<std::uint8_t> frame;
    frame.reserve(8 + header_text.size() + request.cloud.size() * 12);
    frame.insert(frame.end(), kMagic.begin(), kMagic.end());
    append_u32le(frame, static_cast<std::uint32_t>(header_text.size()));
    frame.insert(frame.end(), header_text.begin(), header_text.end());
    for (const auto& p : request.cloud.points) {
        append_f32le(frame, static_cast<float>(p.x()));
        append_f32le(frame, static_cast<float>(p.y()));
        append_f32le(frame, static_cast<float>(p.z()));
    }
    return frame;
}

ReferenceRequest decode_request(const std::vector<std::uint8_t>& frame) {
    if (frame.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), frame.begin()))
        throw Error(ErrorCode::BadFrame, "missing REF1 magic");
    const std::uint32_t header_len = read_u32le(frame.data() + 4);
    if (header_len > kMaxHeaderBytes || frame.size() < 8 + static_cast<std::size_t>(header_len))
        throw Error(ErrorCode::BadFrame, "truncated header");
    const std::string header_text(frame.begin() + 8, frame.begin() + 8 + header_len);
    auto fields = parse_header(header_text);

    ReferenceRequest request;
    if (!fields.count("version") || parse_double(fields["version"], "version") != 1.0)
        throw Error(ErrorCode::BadFrame, "unsupported protocol version");
    request.protocol_version = 1;
    if (fields.count("algorithm")) {
        try {
            request.algorithm = algorithm_from_string(fields["algorithm"]);
        } catch (const Error&) {
            throw Error(ErrorCode::BadFrame, "unknown algorithm '" + fields["algorithm"] + "'");
        }
    }
    if (!fields.count("seed")) throw Error(ErrorCode::BadFrame, "missing seed pose");
    {
        std::istringstream ss(fields["seed"]);
        double px, py, pz, qx, qy, qz, qw;
        if (!(ss >> px >> py >> pz >> qx >> qy >> qz >> qw))
            throw Error(ErrorCode::BadFrame, "seed pose needs 7 numbers");
        request.seed.position = Point3(px, py, pz);
        request.seed.yaw =
            std::atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz));
    }
    if (!fields.count("points")) throw Error(ErrorCode::BadFrame, "missing point count");
    const auto count = static_cast<std::size_t>(parse_double(fields["points"], "points"));
    if (count * 12 > kMaxPayloadBytes) throw Error(ErrorCode::BadFrame, "point count too large");
    if (frame.size() != 8 + header_len + count * 12)
        throw Error(ErrorCode::BadFrame, "payload size does not match point count");

    for (const auto& [key, value] : fields) {
        if (key == "version" || key == "algorithm" || key == "seed" || key == "points") continue;
        request.overrides[key] = value;
    }
    const std::uint8_t* payload = frame.data() + 8 + header_len;
    request.cloud.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double x = read_f32le(payload + 12 * i);
        const double y = read_f32le(payload + 12 * i + 4);
        const double z = read_f32le(payload + 12 * i + 8);
        request.cloud.points.emplace_back(x, y, z);
    }
    return request;
}

std::vector<std::uint8_t> encode_response(const ReferenceResponse& response) {
    std::ostringstream header;
    if (response.ok) {
        header << "status ok\n";
        header << "rms-mm " << fmt_full(response.rms_mm) << '\n';
        header << "iterations " << response.iterations << '\n';
        header << "converged " << (response.converged ? 1 : 0) << '\n';
        header << "server-time-ms " << fmt_full(response.server_time_ms) << '\n';
        header << "payload-doubles 12\n";
    } else {
        header << "status error\n";
        header << "code " << to_string(response.error_code) << '\n';
        header << "message " << response.message << '\n';
        header << "server-time-ms " << fmt_full(response.server_time_ms) << '\n';
        header << "payload-doubles 0\n";
    }
    const std::string header_text = header.str();
    std::vector<std::uint8_t> frame;
    frame.insert(frame.end(), kMagic.begin(), kMagic.end());
    append_u32le(frame, static_cast<std::uint32_t>(header_text.size()));
    frame.insert(frame.end(), header_text.begin(), header_text.end());
    if (response.ok) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) append_f64le(frame, response.transform.rotation(r, c));
        for (int r = 0; r < 3; ++r) append_f64le(frame, response.transform.translation[r]);
    }
    return frame;
}

ReferenceResponse decode_response(const std::vector<std::uint8_t>& frame) {
    if (frame.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), frame.begin()))
        throw Error(ErrorCode::BadFrame, "missing REF1 magic");
    const std::uint32_t header_len = read_u32le(frame.data() + 4);
    if (header_len > kMaxHeaderBytes || frame.size() < 8 + static_cast<std::size_t>(header_len))
        throw Error(ErrorCode::BadFrame, "truncated header");
    auto fields = parse_header(std::string(frame.begin() + 8, frame.begin() + 8 + header_len));

    ReferenceResponse response;
    response.ok = fields["status"] == "ok";
    if (fields.count("server-time-ms"))
        response.server_time_ms = parse_double(fields["server-time-ms"], "server-time-ms");
    if (response.ok) {
        response.rms_mm = parse_double(fields["rms-mm"], "rms-mm");
        response.iterations = static_cast<int>(parse_double(fields["iterations"], "iterations"));
        response.converged = fields["converged"] == "1";
        if (frame.size() != 8 + header_len + 12 * 8)
            throw Error(ErrorCode::BadFrame, "transform payload missing");
        const std::uint8_t* payload = frame.data() + 8 + header_len;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                response.transform.rotation(r, c) = read_f64le(payload + 8 * (3 * r + c));
        for (int r = 0; r < 3; ++r)
            response.transform.translation[r] = read_f64le(payload + 8 * (9 + r));
    } else {
        response.error_code = error_code_from_string(fields["code"]);
        response.message = fields["message"];
    }
    return response;
}

RegistrationResult run_reference(const ServiceConfig& config, const ReferenceRequest& request) {
    if (request.cloud.empty()) throw Error(ErrorCode::EmptyCloud, "request cloud is empty");

    ServiceConfig cfg = config;
    for (const auto& [key, value] : request.overrides) {
        if (key == "max-corr-dist") cfg.icp.max_correspondence_distance = std::stod(value);
        else if (key == "max-iter") cfg.icp.max_iterations = std::stoi(value);
        else if (key == "translation-epsilon") cfg.icp.translation_epsilon = std::stod(value);
        else if (key == "rms-epsilon") cfg.icp.rms_epsilon = std::stod(value);
        else if (key == "crop-radius") cfg.crop_radius = std::stod(value);
        else if (key == "delta") cfg.fourpcs.delta = std::stod(value);
        else if (key == "overlap") cfg.fourpcs.overlap_estimate = std::stod(value);
        else if (key == "sample-size") cfg.fourpcs.sample_size = std::stoi(value);
        else if (key == "max-bases") cfg.fourpcs.max_bases = std::stoi(value);
        else if (key == "seed") cfg.fourpcs.rng_seed = std::stoull(value);
        else if (key == "step-fraction") cfg.detection.step_fraction = std::stod(value);
        else if (key == "min-points") cfg.detection.min_points = std::stoul(value);
        else if (key == "keypoint-voxel") cfg.detection.keypoint_voxel = std::stod(value);
        else if (key == "match-ratio-max") cfg.detection.match_ratio_max = std::stod(value);
        else throw Error(ErrorCode::BadFrame, "unknown override '" + key + "'");
    }

    switch (request.algorithm) {
        case Algorithm::Icp: {
            const PointCloud crop =
                sphere_crop(request.cloud, {request.seed.position, cfg.crop_radius});
            if (crop.empty())
                throw Error(ErrorCode::EmptyCloud, "no scene points within the crop radius");
            return register_icp(cfg.model, crop, seed_to_transform(request.seed), cfg.icp);
        }
        case Algorithm::FourPcs:
            return segment_then_register(request.cloud, cfg.model, cfg.plane, cfg.cluster,
                                         cfg.fourpcs, cfg.icp);
        case Algorithm::SlideBox:
            return detect_robot(request.cloud, cfg.model, cfg.detection, cfg.icp).registration;
    }
    throw Error(ErrorCode::InvalidArgument, "unhandled algorithm");
}

namespace {

bool read_exact(int fd, std::uint8_t* dst, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
        const ssize_t n = ::recv(fd, dst + got, len - got, 0);
        if (n <= 0) return false;
        got += static_cast<std::size_t>(n);
    }
    return true;
}

bool write_all(int fd, const std::uint8_t* src, std::size_t len) {
    std::size_t sent = 0;
    while (sent < len) {
        const ssize_t n = ::send(fd, src + sent, len - sent, MSG_NOSIGNAL);
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

// Reads one full frame; throws BadFrame on malformed input or disconnect.
std::vector<std::uint8_t> read_frame(int fd) {
    std::uint8_t fixed[8];
    if (!read_exact(fd, fixed, 8)) throw Error(ErrorCode::BadFrame, "connection truncated");
    if (!std::equal(kMagic.begin(), kMagic.end(), fixed))
        throw Error(ErrorCode::BadFrame, "missing REF1 magic");
    const std::uint32_t header_len = read_u32le(fixed + 4);
    if (header_len > kMaxHeaderBytes) throw Error(ErrorCode::BadFrame, "header too large");
    std::vector<std::uint8_t> frame(fixed, fixed + 8);
    frame.resize(8 + header_len);
    if (!read_exact(fd, frame.data() + 8, header_len))
        throw Error(ErrorCode::BadFrame, "truncated header");

    // The payload length is announced in the header.
    const auto fields = parse_header(std::string(frame.begin() + 8, frame.end()));
    std::size_t payload = 0;
    if (fields.count("points")) {
        const double n = parse_double(fields.at("points"), "points");
        if (n < 0 || n * 12 > static_cast<double>(kMaxPayloadBytes))
            throw Error(ErrorCode::BadFrame, "point count out of range");
        payload = static_cast<std::size_t>(n) * 12;
    } else if (fields.count("payload-doubles")) {
        payload = static_cast<std::size_t>(parse_double(fields.at("payload-doubles"),
                                                        "payload-doubles")) * 8;
    } else {
        throw Error(ErrorCode::BadFrame, "header announces no payload length");
    }
    const std::size_t offset = frame.size();
    frame.resize(offset + payload);
    if (!read_exact(fd, frame.data() + offset, payload))
        throw Error(ErrorCode::BadFrame, "truncated payload");
    return frame;
}

}  // namespace

ReferenceServer::ReferenceServer(const std::string& bind_address, std::uint16_t port,
                                 ServiceConfig config)
    : config_(std::move(config)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::IoError, "socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw Error(ErrorCode::InvalidArgument, "bad bind address " + bind_address);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
        ::close(listen_fd_);
        throw Error(ErrorCode::IoError, "cannot bind " + bind_address + ":" + std::to_string(port));
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

ReferenceServer::~ReferenceServer() { stop(); }

void ReferenceServer::run() {
    while (!stopping_.load()) {
        reap_workers(false);
        pollfd pfd{listen_fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, 100);
        if (ready <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        timeval timeout{10, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &timeout, sizeof(timeout));
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &timeout, sizeof(timeout));
        std::lock_guard<std::mutex> lock(workers_mutex_);
        auto worker = std::make_unique<Worker>();
        Worker* raw = worker.get();
        worker->thread = std::thread([this, fd, raw] {
            handle_connection(fd);
            raw->done.store(true);
        });
        workers_.push_back(std::move(worker));
    }
}

void ReferenceServer::reap_workers(bool join_all) {
    std::lock_guard<std::mutex> lock(workers_mutex_);
    for (auto it = workers_.begin(); it != workers_.end();) {
        if (join_all || (*it)->done.load()) {
            if ((*it)->thread.joinable()) (*it)->thread.join();
            it = workers_.erase(it);
        } else {
            ++it;
        }
    }
}

void ReferenceServer::start() {
    accept_thread_ = std::thread([this] { run(); });
}

void ReferenceServer::stop() {
    if (stopping_.exchange(true)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    reap_workers(true);
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

void ReferenceServer::handle_connection(int fd) {
    const double t0 = now_ms();
    ReferenceResponse response;
    try {
        const std::vector<std::uint8_t> frame = read_frame(fd);
        const ReferenceRequest request = decode_request(frame);
        const RegistrationResult reg = run_reference(config_, request);
        response.ok = true;
        response.transform = reg.transform;
        response.rms_mm = reg.rms_mm;
        response.iterations = reg.iterations_used;
        response.converged = reg.converged;
    } catch (const Error& e) {
        response.ok = false;
        response.error_code = e.code();
        response.message = e.what();
    } catch (const std::exception& e) {
        response.ok = false;
        response.error_code = ErrorCode::BadFrame;
        response.message = e.what();
    }
    response.server_time_ms = now_ms() - t0;
    const std::vector<std::uint8_t> out = encode_response(response);
    write_all(fd, out.data(), out.size());
    ::close(fd);
}

ReferenceResponse call_reference_service(const std::string& host, std::uint16_t port,
                                         const ReferenceRequest& request) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error(ErrorCode::IoError, "socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw Error(ErrorCode::InvalidArgument, "bad host " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw Error(ErrorCode::IoError, "cannot connect to " + host + ":" + std::to_string(port));
    }
    const std::vector<std::uint8_t> frame = encode_request(request);
    if (!write_all(fd, frame.data(), frame.size())) {
        ::close(fd);
        throw Error(ErrorCode::IoError, "send failed");
    }
    try {
        const std::vector<std::uint8_t> reply = read_frame(fd);
        ::close(fd);
        return decode_response(reply);
    } catch (...) {
        ::close(fd);
        throw;
    }
}

}  // namespace hmdref
