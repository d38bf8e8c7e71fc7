/// `application/x-www-form-urlencoded` body for the given fields, in order.
pub fn encode_form_submission(fields: &[(&str, &str)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, (name, value)) in fields.iter().enumerate() {
        if i > 0 {
            out.push(b'&');
        }
        urlencode_into(name.as_bytes(), &mut out);
        out.push(b'=');
        urlencode_into(value.as_bytes(), &mut out);
    }
    out
}

pub(crate) fn urlencode(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len());
    urlencode_into(bytes, &mut out);
    out
}

fn urlencode_into(bytes: &[u8], out: &mut Vec<u8>) {
    const HEX: &[u8; 16] = b"0123456789ABCDEF";
    for &b in bytes {
        match b {
            b' ' => out.push(b'+'),
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'*' => out.push(b),
            _ => out.extend_from_slice(&[b'%', HEX[(b >> 4) as usize], HEX[(b & 15) as usize]]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(encode_form_submission(&[("card", "4111 1111")]), b"card=4111+1111");
        assert_eq!(encode_form_submission(&[("exp", "12/24"), ("cvv", "123")]), b"exp=12%2F24&cvv=123");
        assert_eq!(encode_form_submission(&[]), b"");
        assert_eq!(urlencode("é~".as_bytes()), b"%C3%A9%7E");
    }
}
