#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hmdref/bench.hpp"
#include "hmdref/detect.hpp"
#include "hmdref/fourpcs.hpp"
#include "hmdref/geometry.hpp"
#include "hmdref/icp.hpp"

namespace hmdref {

// Framed binary protocol, one request per connection:
//   magic "REF1" | u32 LE header length | UTF-8 header | binary payload.
// Request headers carry version, algorithm, the seed pose as seven decimal
// numbers (position + quaternion), the point count, and config overrides; the
// payload is N x 3 float32 LE coordinates. Response payloads carry the 3x3
// rotation (row major) and translation as 12 float64 LE, bit-exact.

struct ReferenceRequest {
    int protocol_version = 1;
    SeedPose seed;
    Algorithm algorithm = Algorithm::Icp;
    std::map<std::string, std::string> overrides;
    PointCloud cloud;
};

struct ReferenceResponse {
    bool ok = false;
    RigidTransform transform;
    double rms_mm = 0.0;
    int iterations = 0;
    bool converged = false;
    ErrorCode error_code = ErrorCode::InvalidArgument;
    std::string message;
    double server_time_ms = 0.0;
};

std::vector<std::uint8_t> encode_request(const ReferenceRequest& request);
ReferenceRequest decode_request(const std::vector<std::uint8_t>& frame);
std::vector<std::uint8_t> encode_response(const ReferenceResponse& response);
ReferenceResponse decode_response(const std::vector<std::uint8_t>& frame);

struct ServiceConfig {
    PointCloud model;
    Algorithm default_algorithm = Algorithm::Icp;
    IcpConfig icp;
    double crop_radius = 2.0;
    FourPcsConfig fourpcs;
    DetectionConfig detection;
    PlaneRemovalConfig plane;
    ClusterConfig cluster{0.1, 50, SIZE_MAX};
};

/// The registration a request resolves to, shared by the server and by
/// in-process callers checking bit-exactness.
RegistrationResult run_reference(const ServiceConfig& config, const ReferenceRequest& request);

constexpr std::uint16_t kDefaultPort = 40411;

class ReferenceServer {
public:
    /// Binds and listens immediately; port 0 picks an ephemeral port.
    ReferenceServer(const std::string& bind_address, std::uint16_t port, ServiceConfig config);
    ~ReferenceServer();

    ReferenceServer(const ReferenceServer&) = delete;
    ReferenceServer& operator=(const ReferenceServer&) = delete;

    std::uint16_t port() const { return port_; }

    /// Blocking accept loop; returns after stop().
    void run();
    /// Accept loop on a background thread.
    void start();
    /// Signals shutdown and joins workers; in-flight requests complete.
    void stop();

private:
    struct Worker {
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void handle_connection(int fd);
    void reap_workers(bool join_all);

    ServiceConfig config_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::list<std::unique_ptr<Worker>> workers_;
    std::mutex workers_mutex_;
};

/// One-shot client: connect, send, await the response.
ReferenceResponse call_reference_service(const std::string& host, std::uint16_t port,
                                         const ReferenceRequest& request);

}  // namespace hmdref
