use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::CliError;

/// RFC 4180 output (CRLF records, minimal quoting) preceded by `#` comment
/// lines that echo the effective configuration.
pub struct CsvOut {
    w: csv::Writer<Box<dyn Write>>,
}

impl CsvOut {
    pub fn create(out: Option<&Path>, preamble: &[(String, String)], header: &[String]) -> Result<Self, CliError> {
        let mut sink: Box<dyn Write> = match out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        for (k, v) in preamble {
            write!(sink, "# {k} = {v}\r\n")?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(sink);
        w.write_record(header)?;
        Ok(Self { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}
