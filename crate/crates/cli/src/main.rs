use clap::Parser;

fn main() {
    let args = match cbi_cli::Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(cbi_cli::main_with_args(&args));
}
