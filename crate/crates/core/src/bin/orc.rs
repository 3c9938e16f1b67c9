fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let stdin = std::io::stdin();
    let code = orc::cli::run(std::env::args_os(), &mut orc::cli::Io {
        stdin: &mut stdin.lock(),
        stdout: &mut std::io::stdout(),
        stderr: &mut std::io::stderr(),
    });
    std::process::exit(code);
}
