/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>

#include <veil/veil.hpp>

using namespace veil;

namespace
{

constexpr int kExitOk       = 0;
constexpr int kExitProtocol = 1;
constexpr int kExitUsage    = 2;

std::int64_t wall_us()
{
    return std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::steady_clock::now().time_since_epoch() )
            .count();
}

/*
 * Socket plumbing. Records are the TCP stream content, exactly as framed
 * by the wire codec.
 */

struct HostPort
{
    std::string host;
    std::uint16_t port = 0;
};

Result<HostPort> parse_hostport( const std::string& text )
{
    const auto colon = text.rfind( ':' );
    if( colon == std::string::npos || colon == 0 || colon + 1 == text.size() )
        return Error{ Err::parse_error, "expected host:port, got " + text };
    HostPort hp;
    hp.host = text.substr( 0, colon );
    try
    {
        const int port = std::stoi( text.substr( colon + 1 ) );
        if( port < 0 || port > 65535 )
            return Error{ Err::parse_error, "port out of range" };
        hp.port = static_cast<std::uint16_t>( port );
    }
    catch( ... )
    {
        return Error{ Err::parse_error, "bad port in " + text };
    }
    return hp;
}

std::string peer_string( const sockaddr_in& addr )
{
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop( AF_INET, &addr.sin_addr, buf, sizeof( buf ) );
    return std::string( buf ) + ":" + std::to_string( ntohs( addr.sin_port ) );
}

class TcpStream
{
public:
    TcpStream() = default;
    explicit TcpStream( int fd )
        : m_fd( fd )
    {}
    TcpStream( const TcpStream& )            = delete;
    TcpStream& operator=( const TcpStream& ) = delete;
    TcpStream( TcpStream&& other ) noexcept { std::swap( m_fd, other.m_fd ); }
    ~TcpStream() { close_fd(); }

    static Result<TcpStream> connect_to( const HostPort& hp, int timeout_ms )
    {
        addrinfo hints{};
        hints.ai_family   = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res     = nullptr;
        if( getaddrinfo( hp.host.c_str(), std::to_string( hp.port ).c_str(), &hints, &res ) != 0
                || res == nullptr )
            return Error{ Err::io_error, "cannot resolve " + hp.host };
        int fd = socket( res->ai_family, res->ai_socktype, res->ai_protocol );
        if( fd < 0 )
        {
            freeaddrinfo( res );
            return Error{ Err::io_error, "socket() failed" };
        }
        const int rc = ::connect( fd, res->ai_addr, res->ai_addrlen );
        freeaddrinfo( res );
        if( rc != 0 )
        {
            ::close( fd );
            return Error{ Err::io_error,
                    "connect to " + hp.host + ":" + std::to_string( hp.port ) + " failed: "
                            + std::strerror( errno ) };
        }
        int flag = 1;
        setsockopt( fd, IPPROTO_TCP, TCP_NODELAY, &flag, sizeof( flag ) );
        (void)timeout_ms;
        return TcpStream( fd );
    }

    Status write_frame( const RecordFrame& frame )
    {
        auto bytes = encode_record( frame );
        if( !bytes.ok() )
            return bytes.error();
        return write_all( bytes.value() );
    }

    Status write_all( ByteView data )
    {
        std::size_t off = 0;
        while( off < data.size() )
        {
            const ssize_t n = ::send( m_fd, data.data() + off, data.size() - off, MSG_NOSIGNAL );
            if( n <= 0 )
                return Error{ Err::io_error, std::string( "send failed: " ) + std::strerror( errno ) };
            off += static_cast<std::size_t>( n );
        }
        return ok_status();
    }

    /// One record from the stream; nullopt on clean EOF at a record
    /// boundary.
    Result<std::optional<RecordFrame>> read_frame( int timeout_ms )
    {
        for( ;; )
        {
            auto next = m_stream.next();
            if( !next.ok() )
                return next.error();
            if( next.value() )
                return std::optional<RecordFrame>( std::move( *next.value() ) );

            pollfd pfd{ m_fd, POLLIN, 0 };
            const int pr = ::poll( &pfd, 1, timeout_ms );
            if( pr == 0 )
                return Error{ Err::io_error, "read timeout" };
            if( pr < 0 )
                return Error{ Err::io_error, std::string( "poll failed: " ) + std::strerror( errno ) };
            std::uint8_t buf[4096];
            const ssize_t n = ::recv( m_fd, buf, sizeof( buf ), 0 );
            if( n == 0 )
            {
                if( m_stream.buffered() == 0 )
                    return std::optional<RecordFrame>{};
                return Error{ Err::io_error, "peer closed mid-record" };
            }
            if( n < 0 )
                return Error{ Err::io_error, std::string( "recv failed: " ) + std::strerror( errno ) };
            m_stream.append( ByteView( buf, static_cast<std::size_t>( n ) ) );
        }
    }

    [[nodiscard]] int fd() const noexcept { return m_fd; }

private:
    void close_fd()
    {
        if( m_fd >= 0 )
        {
            ::close( m_fd );
            m_fd = -1;
        }
    }

    int          m_fd = -1;
    RecordStream m_stream;
};

std::atomic<bool> g_stop{ false };

void handle_stop_signal( int )
{
    g_stop.store( true );
}

CaptureEvent make_event( const FlowId& flow, Direction dir, const RecordFrame& frame )
{
    CaptureEvent event;
    event.time_us = wall_us();
    event.flow    = flow;
    event.dir     = dir;
    event.raw     = encode_record( frame ).value(); // canonical == on-wire bytes
    event.summary = summarize_frame( frame );
    return event;
}

/*
 * serve
 */

struct ServeOptions
{
    std::string listen = "127.0.0.1:8443";
    std::string store_path;
    bool        legacy_only = false;
    std::string capture_path;
    std::optional<std::uint64_t> seed;
};

void serve_connection( int fd, sockaddr_in peer, std::uint64_t conn_number,
        std::shared_ptr<const CertStore> store, const ServeOptions& opts,
        std::shared_ptr<CaptureSink> sink, const std::string& local_id )
{
    TcpStream stream( fd );
    FlowId    flow{ peer_string( peer ), local_id, conn_number };

    ServerConfig cfg;
    cfg.store       = std::move( store );
    cfg.legacy_only = opts.legacy_only;
    if( opts.seed )
        cfg.rng_seed = *opts.seed + conn_number;
    auto conn = ServerConnection::create( cfg );
    if( !conn.ok() )
    {
        log_error( "connection_setup_failed", { { "error", conn.error().to_string() } } );
        return;
    }
    ServerConnection& server = conn.value();
    log_info( "conn_open", { { "conn", conn_number }, { "peer", flow.client_id } } );

    HandshakePhase last_phase = HandshakePhase::plain;
    for( ;; )
    {
        auto incoming = stream.read_frame( 30000 );
        if( !incoming.ok() )
        {
            log_info( "conn_read_end", { { "conn", conn_number },
                    { "reason", incoming.error().to_string() } } );
            break;
        }
        if( !incoming.value() )
            break; // clean EOF
        sink->record( make_event( flow, Direction::client_to_server, *incoming.value() ) );

        auto replies = server.step( *incoming.value() );
        if( !replies.ok() )
        {
            if( auto alert = server.take_alert_to_send() )
            {
                sink->record( make_event( flow, Direction::server_to_client, *alert ) );
                (void)stream.write_frame( *alert );
            }
            log_warn( "handshake_failed", { { "conn", conn_number },
                    { "error", replies.error().to_string() } } );
            break;
        }
        for( const auto& f : replies.value() )
        {
            sink->record( make_event( flow, Direction::server_to_client, f ) );
            if( !stream.write_frame( f ).ok() )
                return;
        }
        if( server.phase() != last_phase )
        {
            last_phase = server.phase();
            log_info( "phase_complete",
                    { { "conn", conn_number },
                            { "phase", server.phase() == HandshakePhase::first_complete ? 1 : 2 },
                            { "cert_subject", server.last_selected_subject() },
                            { "sni", server.established_sni()
                                            ? nlohmann::json( server.established_sni()->host() )
                                            : nlohmann::json() } } );
        }
        for( const auto& data : server.take_received_application() )
        {
            auto echo = server.send_application( data );
            if( !echo.ok() )
            {
                log_warn( "echo_failed", { { "error", echo.error().to_string() } } );
                return;
            }
            for( const auto& f : echo.value() )
            {
                sink->record( make_event( flow, Direction::server_to_client, f ) );
                if( !stream.write_frame( f ).ok() )
                    return;
            }
        }
        if( server.closed() )
        {
            if( auto bye = server.make_close_frame(); bye.ok() )
            {
                sink->record( make_event( flow, Direction::server_to_client, bye.value() ) );
                (void)stream.write_frame( bye.value() );
            }
            break;
        }
    }
    log_info( "conn_close", { { "conn", conn_number } } );
}

int run_serve( const ServeOptions& opts )
{
    auto hp = parse_hostport( opts.listen );
    if( !hp.ok() )
    {
        std::cerr << "error: " << hp.error().to_string() << "\n";
        return kExitUsage;
    }
    auto loaded = store_load( opts.store_path );
    if( !loaded.ok() )
    {
        std::cerr << "error: " << loaded.error().to_string() << "\n";
        return kExitUsage;
    }
    for( const auto& warning : loaded.value().load_warnings )
        log_warn( "store_warning", { { "detail", warning } } );
    auto store = std::make_shared<const CertStore>( std::move( loaded.value() ) );

    const int listener = socket( AF_INET, SOCK_STREAM, 0 );
    if( listener < 0 )
    {
        std::cerr << "error: socket() failed\n";
        return kExitUsage;
    }
    int one = 1;
    setsockopt( listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof( one ) );
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port   = htons( hp.value().port );
    if( inet_pton( AF_INET, hp.value().host.c_str(), &addr.sin_addr ) != 1 )
        addr.sin_addr.s_addr = htonl( INADDR_LOOPBACK );
    if( bind( listener, reinterpret_cast<sockaddr*>( &addr ), sizeof( addr ) ) != 0
            || listen( listener, 32 ) != 0 )
    {
        std::cerr << "error: cannot bind " << opts.listen << ": " << std::strerror( errno )
                  << "\n";
        ::close( listener );
        return kExitUsage;
    }
    socklen_t len = sizeof( addr );
    getsockname( listener, reinterpret_cast<sockaddr*>( &addr ), &len );
    const std::uint16_t port     = ntohs( addr.sin_port );
    const std::string   local_id = hp.value().host + ":" + std::to_string( port );

    auto sink = std::make_shared<CaptureSink>();
    if( !opts.capture_path.empty() )
    {
        if( auto st = sink->open( opts.capture_path ); !st.ok() )
        {
            std::cerr << "error: " << st.error().to_string() << "\n";
            ::close( listener );
            return kExitUsage;
        }
    }

    std::vector<std::string> named;
    for( const auto& [name, entry] : store->named )
        named.push_back( name );
    log_info( "ready", { { "port", port }, { "default_subject", store->default_entry.cert.subject },
                               { "named", named }, { "legacy_only", opts.legacy_only } } );

    std::signal( SIGTERM, handle_stop_signal );
    std::signal( SIGINT, handle_stop_signal );

    std::vector<std::jthread> workers;
    std::uint64_t             conn_number = 0;
    while( !g_stop.load() )
    {
        pollfd pfd{ listener, POLLIN, 0 };
        const int pr = ::poll( &pfd, 1, 200 );
        if( pr <= 0 )
            continue;
        sockaddr_in peer{};
        socklen_t   plen = sizeof( peer );
        const int   fd   = accept( listener, reinterpret_cast<sockaddr*>( &peer ), &plen );
        if( fd < 0 )
            continue;
        workers.emplace_back( serve_connection, fd, peer, conn_number++, store, std::cref( opts ),
                sink, local_id );
    }
    ::close( listener );
    log_info( "draining", { { "open_connections", workers.size() } } );
    workers.clear(); // jthread joins
    log_info( "stopped", {} );
    return kExitOk;
}

/*
 * connect
 */

struct ConnectOptions
{
    std::string target = "127.0.0.1:8443";
    std::string sni;
    std::string mode = "masked";
    std::optional<std::string> expect_front_name;
    std::uint64_t payload    = 0;
    int           timeout_ms = 10000;
    std::string   capture_path;
    std::optional<std::uint64_t> seed;
    bool          quiet = false;
};

struct ConnectReport
{
    bool          ok = false;
    std::string   error;
    std::string   established_sni;
    int           handshakes = 0;
    bool          fallback   = false;
    std::int64_t  phase1_us  = -1;
    std::int64_t  phase2_us  = -1;
    std::int64_t  total_us   = 0;
    std::uint64_t echo_bytes = 0;
};

ConnectReport connect_once( const ConnectOptions& opts )
{
    ConnectReport report;

    auto hp = parse_hostport( opts.target );
    if( !hp.ok() )
    {
        report.error = hp.error().to_string();
        return report;
    }
    ClientConfig cfg;
    if( !opts.sni.empty() )
    {
        auto sni = SniValue::parse( opts.sni );
        if( !sni.ok() )
        {
            report.error = sni.error().to_string();
            return report;
        }
        cfg.target_sni = sni.value();
    }
    cfg.mode              = opts.mode == "legacy" ? ClientMode::legacy : ClientMode::masked;
    cfg.expect_front_name = opts.expect_front_name;
    cfg.rng_seed          = opts.seed;
    auto client           = ClientConnection::create( cfg );
    if( !client.ok() )
    {
        report.error = client.error().to_string();
        return report;
    }
    ClientConnection& conn = client.value();

    CaptureSink sink;
    if( !opts.capture_path.empty() )
        if( auto st = sink.open( opts.capture_path ); !st.ok() )
        {
            report.error = st.error().to_string();
            return report;
        }
    FlowId flow{ "client", opts.target, 0 };

    auto stream_result = TcpStream::connect_to( hp.value(), opts.timeout_ms );
    if( !stream_result.ok() )
    {
        report.error = stream_result.error().to_string();
        return report;
    }
    TcpStream stream = std::move( stream_result.value() );

    const std::int64_t t0         = wall_us();
    HandshakePhase     last_phase = HandshakePhase::plain;

    auto flush = [&]( const std::vector<RecordFrame>& frames ) -> Status
    {
        for( const auto& f : frames )
        {
            sink.record( make_event( flow, Direction::client_to_server, f ) );
            if( auto st = stream.write_frame( f ); !st.ok() )
                return st;
        }
        return ok_status();
    };

    auto first = conn.step( std::nullopt );
    if( !first.ok() || !flush( first.value() ).ok() )
    {
        report.error = first.ok() ? "write failed" : first.error().to_string();
        return report;
    }

    auto target_phase = [&]
    {
        return cfg.mode == ClientMode::legacy || conn.fallback_used()
                ? HandshakePhase::first_complete
                : HandshakePhase::second_complete;
    };

    while( conn.phase() != target_phase() && !conn.failed() )
    {
        auto incoming = stream.read_frame( opts.timeout_ms );
        if( !incoming.ok() )
        {
            report.error = incoming.error().to_string();
            return report;
        }
        if( !incoming.value() )
        {
            report.error = "server closed during handshake";
            return report;
        }
        sink.record( make_event( flow, Direction::server_to_client, *incoming.value() ) );
        auto replies = conn.step( *incoming.value() );
        if( !replies.ok() )
        {
            if( auto alert = conn.take_alert_to_send() )
            {
                sink.record( make_event( flow, Direction::client_to_server, *alert ) );
                (void)stream.write_frame( *alert );
            }
            report.error = replies.error().to_string();
            return report;
        }
        if( !flush( replies.value() ).ok() )
        {
            report.error = "write failed";
            return report;
        }
        if( conn.phase() != last_phase )
        {
            const std::int64_t now = wall_us() - t0;
            if( conn.phase() == HandshakePhase::first_complete )
                report.phase1_us = now;
            else if( conn.phase() == HandshakePhase::second_complete )
                report.phase2_us = now - std::max<std::int64_t>( report.phase1_us, 0 );
            last_phase = conn.phase();
            if( !opts.quiet )
                std::cout << "phase " << ( conn.phase() == HandshakePhase::first_complete ? 1 : 2 )
                          << " complete, certificate subject "
                          << conn.peer_certificate()->subject << "\n";
        }
    }

    if( opts.payload > 0 )
    {
        DetRng rng( opts.seed ? *opts.seed + 99 : 99 );
        Bytes  payload = rng.bytes( opts.payload );
        auto   frames  = conn.send_application( payload );
        if( !frames.ok() || !flush( frames.value() ).ok() )
        {
            report.error = frames.ok() ? "write failed" : frames.error().to_string();
            return report;
        }
        Bytes echoed;
        while( echoed.size() < payload.size() )
        {
            auto incoming = stream.read_frame( opts.timeout_ms );
            if( !incoming.ok() || !incoming.value() )
            {
                report.error = incoming.ok() ? "server closed during echo"
                                             : incoming.error().to_string();
                return report;
            }
            sink.record( make_event( flow, Direction::server_to_client, *incoming.value() ) );
            auto replies = conn.step( *incoming.value() );
            if( !replies.ok() )
            {
                report.error = replies.error().to_string();
                return report;
            }
            for( const auto& data : conn.take_received_application() )
                echoed.insert( echoed.end(), data.begin(), data.end() );
        }
        if( echoed != payload )
        {
            report.error = "echoed payload differs";
            return report;
        }
        report.echo_bytes = echoed.size();
    }

    if( auto bye = conn.make_close_frame(); bye.ok() )
    {
        sink.record( make_event( flow, Direction::client_to_server, bye.value() ) );
        (void)stream.write_frame( bye.value() );
    }

    report.ok              = true;
    report.total_us        = wall_us() - t0;
    report.handshakes      = conn.handshakes_completed();
    report.fallback        = conn.fallback_used();
    report.established_sni = conn.established_sni() ? conn.established_sni()->host() : "";
    return report;
}

int run_connect( const ConnectOptions& opts )
{
    // name validation happens before any connection attempt
    if( !opts.sni.empty() )
    {
        if( auto sni = SniValue::parse( opts.sni ); !sni.ok() )
        {
            std::cerr << "error: --sni " << sni.error().to_string() << "\n";
            return kExitUsage;
        }
    }
    else if( opts.mode == "masked" )
    {
        std::cerr << "error: masked mode requires --sni\n";
        return kExitUsage;
    }

    ConnectReport report = connect_once( opts );
    if( report.fallback )
        std::cout << "fallback: server sent return cause 0x70, retried with a legacy handshake\n";
    if( !report.ok )
    {
        std::cout << "RESULT fail error=" << report.error << "\n";
        return kExitProtocol;
    }
    if( report.echo_bytes > 0 )
        std::cout << "echo verified: " << report.echo_bytes << " bytes\n";
    std::cout << "RESULT ok mode=" << opts.mode << " established_sni=" << report.established_sni
              << " handshakes=" << report.handshakes << " fallback=" << ( report.fallback ? 1 : 0 )
              << " phase1_us=" << report.phase1_us << " phase2_us=" << report.phase2_us << "\n";
    return kExitOk;
}

/*
 * sniff
 */

int run_sniff( const std::string& path )
{
    auto events = capture_read( path );
    if( !events.ok() )
    {
        std::cerr << "error: " << events.error().to_string() << "\n";
        return kExitProtocol;
    }
    std::vector<FlowId> order;
    for( const auto& event : events.value() )
        if( std::find( order.begin(), order.end(), event.flow ) == order.end() )
            order.push_back( event.flow );

    for( std::size_t i = 0; i < order.size(); ++i )
    {
        FlowState flow = observe_capture( events.value(), order[i] );
        if( flow.classification == FlowClass::identified )
            std::cout << "flow " << i << ": IDENTIFIED " << flow.sni->host() << "\n";
        else
            std::cout << "flow " << i << ": " << flow_class_name( flow.classification ) << " ("
                      << flow.plaintext_client_hellos << " plaintext ClientHello, "
                      << flow.sni_extensions_seen << " SNI)\n";
        std::cout << "  records " << flow.records_seen << ", plaintext handshake types [";
        for( std::size_t k = 0; k < flow.plaintext_handshake_types.size(); ++k )
            std::cout << ( k ? " " : "" ) << int( flow.plaintext_handshake_types[k] );
        std::cout << "]\n";
    }
    return kExitOk;
}

/*
 * shapesim / bench share the simulated testbed setup.
 */

Result<std::shared_ptr<const CertStore>> build_sim_store( const std::string& sni,
        const std::vector<std::string>& extra, std::uint64_t seed )
{
    std::vector<std::string> named;
    if( !sni.empty() )
        named.push_back( sni );
    for( const auto& name : extra )
        if( std::find( named.begin(), named.end(), name ) == named.end() )
            named.push_back( name );
    auto store = make_demo_store( "front.example", named, seed );
    if( !store.ok() )
        return store.error();
    return std::make_shared<const CertStore>( std::move( store.value() ) );
}

struct ShapesimOptions
{
    std::string   mode = "masked";
    std::string   sni  = "video.example";
    std::string   rate_map_path;
    double        default_rate = 10e6;
    double        capacity     = 2.5e6;
    double        delay_ms     = 5.0;
    std::uint64_t payload      = 10'000'000;
    std::string   csv_path;
    std::string   capture_path;
    std::uint64_t seed = 1;
};

Result<ShaperConfig> load_rate_map( const std::string& path, double default_rate )
{
    ShaperConfig cfg;
    cfg.default_rate_bps = default_rate;
    if( path.empty() )
        return cfg;
    std::ifstream in( path );
    if( !in )
        return Error{ Err::io_error, "cannot open " + path };
    std::string line;
    while( std::getline( in, line ) )
    {
        if( line.empty() || line[0] == '#' )
            continue;
        std::istringstream ls( line );
        std::string        host;
        double             rate = 0;
        if( !( ls >> host >> rate ) )
            return Error{ Err::parse_error, "rate map line: " + line };
        cfg.class_rates_bps[host] = rate;
    }
    return cfg;
}

int run_shapesim( const ShapesimOptions& opts )
{
    auto shaper = load_rate_map( opts.rate_map_path, opts.default_rate );
    if( !shaper.ok() )
    {
        std::cerr << "error: " << shaper.error().to_string() << "\n";
        return kExitUsage;
    }
    if( opts.rate_map_path.empty() )
        shaper.value().class_rates_bps[opts.sni] = 1e6;
    if( auto v = shaper.value().validate(); !v.ok() )
    {
        std::cerr << "error: " << v.error().to_string() << "\n";
        return kExitUsage;
    }

    std::vector<std::string> extra;
    for( const auto& [name, rate] : shaper.value().class_rates_bps )
        extra.push_back( name );
    auto store = build_sim_store( opts.sni, extra, opts.seed + 1000 );
    if( !store.ok() )
    {
        std::cerr << "error: " << store.error().to_string() << "\n";
        return kExitUsage;
    }

    ClientConfig cc;
    cc.target_sni = SniValue::parse( opts.sni ).value();
    cc.mode       = opts.mode == "legacy" ? ClientMode::legacy : ClientMode::masked;
    cc.rng_seed   = opts.seed;
    ServerConfig sc;
    sc.store    = store.value();
    sc.rng_seed = opts.seed + 1;

    LinkConfig link{ opts.capacity, static_cast<std::int64_t>( opts.delay_ms * 1000 ) };
    auto report = simulate_transfer( cc, sc, shaper.value(), link, opts.payload );

    if( !opts.csv_path.empty() )
    {
        std::ofstream csv( opts.csv_path, std::ios::trunc );
        if( !csv )
        {
            std::cerr << "error: cannot write " << opts.csv_path << "\n";
            return kExitUsage;
        }
        csv << "t_seconds,throughput_bps\n";
        for( const auto& [t, bps] : report.timeline )
            csv << t << "," << bps << "\n";
    }
    if( !opts.capture_path.empty() )
    {
        if( auto st = capture_write( report.capture, opts.capture_path ); !st.ok() )
        {
            std::cerr << "error: " << st.error().to_string() << "\n";
            return kExitUsage;
        }
    }

    if( !report.ok )
    {
        std::cout << "RESULT fail error=" << report.error << "\n";
        return kExitProtocol;
    }
    std::cout << "classification: " << flow_class_name( report.classification )
              << ( report.sni ? " " + *report.sni : "" ) << "\n";
    std::cout << "steady state: " << report.steady_bps / 1e6 << " Mbps over "
              << report.timeline.size() << " windows\n";
    std::cout << "RESULT ok mode=" << opts.mode << " steady_bps=" << report.steady_bps
              << " total_us=" << report.total_us << "\n";
    return kExitOk;
}

struct BenchOptions
{
    std::uint64_t payload  = 12'500'000;
    int           repeats  = 3;
    double        capacity = 10e6;
    double        delay_ms = 8.0;
    std::uint64_t seed     = 1;
    bool          wallclock = false;
    std::string   target;
    std::string   sni = "video.example";
};

int run_bench( const BenchOptions& opts )
{
    if( opts.wallclock )
    {
        if( opts.target.empty() )
        {
            std::cerr << "error: --wallclock needs --target of a running server\n";
            return kExitUsage;
        }
        std::vector<std::int64_t> legacy_times, masked_times;
        for( int i = 0; i < std::max( 1, opts.repeats ); ++i )
        {
            for( const char* mode : { "legacy", "masked" } )
            {
                ConnectOptions copts;
                copts.target  = opts.target;
                copts.sni     = opts.sni;
                copts.mode    = mode;
                copts.payload = opts.payload;
                copts.quiet   = true;
                copts.seed    = opts.seed + i;
                auto r        = connect_once( copts );
                if( !r.ok )
                {
                    std::cout << "RESULT fail error=" << r.error << "\n";
                    return kExitProtocol;
                }
                ( std::string( mode ) == "legacy" ? legacy_times : masked_times )
                        .push_back( r.total_us );
            }
        }
        std::sort( legacy_times.begin(), legacy_times.end() );
        std::sort( masked_times.begin(), masked_times.end() );
        const std::int64_t lg = legacy_times[legacy_times.size() / 2];
        const std::int64_t mk = masked_times[masked_times.size() / 2];
        const double       fraction = mk > 0 ? double( mk - lg ) / double( mk ) : 0.0;
        std::cout << "payload_bytes=" << opts.payload << " legacy_us=" << lg
                  << " masked_us=" << mk << " extra_handshake_fraction=" << fraction << "\n";
        std::cout << "RESULT ok extra_handshake_fraction=" << fraction << "\n";
        return kExitOk;
    }

    auto store = build_sim_store( opts.sni, {}, opts.seed + 1000 );
    if( !store.ok() )
    {
        std::cerr << "error: " << store.error().to_string() << "\n";
        return kExitUsage;
    }
    ClientConfig cc;
    cc.target_sni = SniValue::parse( opts.sni ).value();
    cc.rng_seed   = opts.seed;
    ServerConfig sc;
    sc.store    = store.value();
    sc.rng_seed = opts.seed + 1;
    LinkConfig link{ opts.capacity, static_cast<std::int64_t>( opts.delay_ms * 1000 ) };

    auto bench = run_bench( cc, sc, link, opts.payload, opts.repeats, opts.seed );
    if( !bench.ok )
    {
        std::cout << "RESULT fail error=" << bench.error << "\n";
        return kExitProtocol;
    }
    std::cout << "payload_bytes=" << bench.payload_bytes << " repeats=" << bench.repeats << "\n";
    std::cout << "legacy_us=" << bench.legacy_us << " masked_us=" << bench.masked_us << "\n";
    std::cout << "phase2_wire_bytes=" << bench.phase2_wire_bytes << "\n";
    std::cout << "extra_handshake_fraction=" << bench.extra_handshake_fraction << " ("
              << bench.extra_handshake_fraction * 100.0 << "%)\n";
    std::cout << "RESULT ok extra_handshake_fraction=" << bench.extra_handshake_fraction << "\n";
    return kExitOk;
}

/*
 * certgen
 */

struct CertgenOptions
{
    std::string   subject;
    int           days = 30;
    std::string   out_path;
    bool          make_default = false;
    std::optional<std::uint64_t> seed;
    std::string   not_before;
};

int run_certgen( const CertgenOptions& opts )
{
    std::optional<std::int64_t> now;
    if( !opts.not_before.empty() )
    {
        auto parsed = parse_utc( opts.not_before );
        if( !parsed )
        {
            std::cerr << "error: --not-before must be like 2026-08-11T00:00:00Z\n";
            return kExitUsage;
        }
        now = *parsed;
    }
    auto generated = generate_self_signed( opts.subject, opts.days, opts.seed, now );
    if( !generated.ok() )
    {
        std::cerr << "error: " << generated.error().to_string() << "\n";
        return kExitUsage;
    }

    std::vector<detail::RawStoreEntry> entries;
    if( std::ifstream probe( opts.out_path ); probe.good() )
    {
        std::ostringstream ss;
        ss << probe.rdbuf();
        auto existing = detail::raw_store_from_text( ss.str() );
        if( !existing.ok() )
        {
            std::cerr << "error: existing store: " << existing.error().to_string() << "\n";
            return kExitUsage;
        }
        entries = std::move( existing.value() );
    }

    bool have_default = false;
    for( const auto& e : entries )
        have_default = have_default || e.is_default;

    detail::RawStoreEntry fresh;
    fresh.entry      = CertEntry{ generated.value().first, generated.value().second };
    fresh.is_default = opts.make_default && !have_default;
    if( opts.make_default && have_default )
        log_warn( "default_kept", { { "detail", "store already has a default entry" } } );

    bool replaced = false;
    for( auto& e : entries )
        if( e.entry.cert.subject == opts.subject )
        {
            fresh.is_default = fresh.is_default || e.is_default;
            e                = fresh;
            replaced         = true;
            log_warn( "entry_replaced", { { "subject", opts.subject } } );
            break;
        }
    if( !replaced )
        entries.push_back( fresh );

    std::stable_sort( entries.begin(), entries.end(),
            []( const auto& a, const auto& b ) { return a.is_default > b.is_default; } );

    std::string text;
    for( std::size_t i = 0; i < entries.size(); ++i )
    {
        if( i )
            text += "\n";
        text += detail::raw_entry_to_text( entries[i] );
    }
    if( auto st = detail::write_file( opts.out_path, text ); !st.ok() )
    {
        std::cerr << "error: " << st.error().to_string() << "\n";
        return kExitUsage;
    }
    std::cout << "wrote " << opts.out_path << " (" << entries.size() << " entries"
              << ( fresh.is_default ? ", new default" : "" ) << ")\n";
    return kExitOk;
}

} // namespace

int main( int argc, char** argv )
{
    if( !crypto_runtime_init() )
    {
        std::cerr << "error: crypto runtime init failed\n";
        return kExitUsage;
    }

    CLI::App app{ "veil: two-phase TLS-style channel setup that keeps the server name off the "
                  "wire, plus the middlebox lab it is tested against" };
    app.require_subcommand( 1 );

    ServeOptions serve_opts;
    auto*        serve = app.add_subcommand( "serve", "run the fronting server" );
    serve->add_option( "--listen", serve_opts.listen, "bind address host:port (port 0 = ephemeral)" );
    serve->add_option( "--store", serve_opts.store_path, "certificate store file" )->required();
    serve->add_flag( "--legacy-only", serve_opts.legacy_only,
            "refuse bare hellos with the 0x70 return cause" );
    serve->add_option( "--capture", serve_opts.capture_path, "write a capture log of all traffic" );
    std::uint64_t serve_seed = 0;
    auto* serve_seed_opt = serve->add_option( "--seed", serve_seed, "deterministic randoms" );

    ConnectOptions connect_opts;
    auto*          connect = app.add_subcommand( "connect", "run the client" );
    connect->add_option( "--target", connect_opts.target, "server host:port" );
    connect->add_option( "--sni", connect_opts.sni, "target server name" );
    connect->add_option( "--mode", connect_opts.mode, "masked|legacy" )
            ->check( CLI::IsMember( { "masked", "legacy" } ) );
    connect->add_option( "--expect-front-name", connect_opts.expect_front_name,
            "pin the first-handshake certificate subject" );
    connect->add_option( "--payload", connect_opts.payload, "echo this many bytes after setup" );
    connect->add_option( "--timeout-ms", connect_opts.timeout_ms, "socket timeout" );
    connect->add_option( "--capture", connect_opts.capture_path, "write a client-side capture" );
    std::uint64_t connect_seed = 0;
    auto* connect_seed_opt = connect->add_option( "--seed", connect_seed, "deterministic randoms" );

    std::string sniff_path;
    auto*       sniff = app.add_subcommand( "sniff", "classify flows in a capture file" );
    sniff->add_option( "capture", sniff_path, "capture file path" )->required();

    ShapesimOptions shapesim_opts;
    auto* shapesim = app.add_subcommand( "shapesim",
            "simulate a shaped transfer and emit a throughput timeline" );
    shapesim->add_option( "--mode", shapesim_opts.mode, "masked|legacy" )
            ->check( CLI::IsMember( { "masked", "legacy" } ) );
    shapesim->add_option( "--sni", shapesim_opts.sni, "target server name" );
    shapesim->add_option( "--rate-map", shapesim_opts.rate_map_path,
            "file of `host bits_per_second` lines (default: 1 Mbps for --sni)" );
    shapesim->add_option( "--default-rate", shapesim_opts.default_rate,
            "shaper rate for unclassified flows, bits/s" );
    shapesim->add_option( "--capacity", shapesim_opts.capacity, "link capacity, bits/s" );
    shapesim->add_option( "--delay-ms", shapesim_opts.delay_ms, "one-way propagation delay" );
    shapesim->add_option( "--payload", shapesim_opts.payload, "transfer size, bytes" );
    shapesim->add_option( "--csv", shapesim_opts.csv_path, "write t_seconds,throughput_bps rows" );
    shapesim->add_option( "--capture", shapesim_opts.capture_path, "write the simulated capture" );
    shapesim->add_option( "--seed", shapesim_opts.seed, "simulation seed" );

    BenchOptions bench_opts;
    auto*        bench = app.add_subcommand( "bench",
                   "compare legacy vs masked transfer time. --payload is in BYTES; a '100Mb' "
                          "transfer is 12500000 bytes read as megabits or 100000000 read as megabytes" );
    bench->add_option( "--payload", bench_opts.payload, "transfer size in bytes" );
    bench->add_option( "--repeats", bench_opts.repeats, "median over this many runs" );
    bench->add_option( "--capacity", bench_opts.capacity, "in-memory link capacity, bits/s" );
    bench->add_option( "--delay-ms", bench_opts.delay_ms, "one-way propagation delay" );
    bench->add_option( "--seed", bench_opts.seed, "bench seed" );
    bench->add_flag( "--wallclock", bench_opts.wallclock,
            "measure a live server over sockets instead of the in-memory link" );
    bench->add_option( "--target", bench_opts.target, "host:port for --wallclock" );
    bench->add_option( "--sni", bench_opts.sni, "target server name" );

    CertgenOptions certgen_opts;
    auto*          certgen = app.add_subcommand( "certgen", "generate a self-signed certificate" );
    certgen->add_option( "--subject", certgen_opts.subject, "certificate subject name" )
            ->required();
    certgen->add_option( "--days", certgen_opts.days, "validity window length" );
    certgen->add_option( "--out", certgen_opts.out_path, "store file to create or update" )
            ->required();
    certgen->add_flag( "--default", certgen_opts.make_default,
            "mark this entry as the store default" );
    std::uint64_t certgen_seed = 0;
    auto* certgen_seed_opt = certgen->add_option( "--seed", certgen_seed, "deterministic keys" );
    certgen->add_option( "--not-before", certgen_opts.not_before,
            "validity start, e.g. 2026-08-11T00:00:00Z (default: now)" );

    try
    {
        app.parse( argc, argv );
    }
    catch( const CLI::ParseError& e )
    {
        const int rc = app.exit( e );
        return rc == 0 ? kExitOk : kExitUsage;
    }

    if( serve->parsed() )
    {
        if( serve_seed_opt->count() )
            serve_opts.seed = serve_seed;
        return run_serve( serve_opts );
    }
    if( connect->parsed() )
    {
        if( connect_seed_opt->count() )
            connect_opts.seed = connect_seed;
        return run_connect( connect_opts );
    }
    if( sniff->parsed() )
        return run_sniff( sniff_path );
    if( shapesim->parsed() )
        return run_shapesim( shapesim_opts );
    if( bench->parsed() )
        return run_bench( bench_opts );
    if( certgen->parsed() )
    {
        if( certgen_seed_opt->count() )
            certgen_opts.seed = certgen_seed;
        return run_certgen( certgen_opts );
    }
    return kExitUsage;
}
