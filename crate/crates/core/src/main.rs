fn main() { std::process::exit(lmn_isp::cli::cli_main(std::env::args().collect())); }
