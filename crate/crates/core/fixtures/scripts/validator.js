// Trusted payment logic for the checkout page.

function cardNumberHasWhiteSpaces() {
  return /\s/g.test(forms.payment.card);
}

// Returns true when the payment data is NOT acceptable.
function validate(d) {
  if (!d.holder || /^\s*$/.test(d.holder)) {
    return true;
  }
  if (!/^\d{13,19}$/.test(d.card)) {
    return true;
  }
  if (!/^(0[1-9]|1[0-2])\/\d\d$/.test(d.exp)) {
    return true;
  }
  return !/^\d{3,4}$/.test(d.cvv);
}

function doPay(e) {
  // input form to JS associative array
  d = toDict(forms.payment);

  // validate payment data
  if (validate(d)) {
      return false;
  }

  // prepare raw messages
  json_str = JSON.stringify(d);

  // create SecureXMLHttpRequest
  var xhr = new SecureXMLHttpRequest();
  xhr.open("POST",
    "https://pay.site.com/submit_data",
    false); // only sync calls

  // use sec_json content type
  xhr.setRequestHeader('Content-Type',
    'application/sec_json; charset=UTF-8');

  // encrypt, sign, and send
  xhr.send(json_str);

  // seal data for possible future reuse
  storeCreditCardData({holder: d.holder, card: d.card, expiry: d.exp, cvv: d.cvv});
  return xhr.status == 200;
}

function storeCreditCardData(d){
  localStorage['holder'] = d.holder;
  localStorage['cc']     = d.card;
  localStorage['exp']    = d.expiry;
  localStorage['cvv']    = d.cvv;
}

function savedCardSuffix() {
  var cc = localStorage.getItem('cc');
  if (cc == null) {
    return "";
  }
  return cc.substring(cc.length - 4);
}

addEventListener('message', function (m) {
  if (m.cmd == 'validate') {
    postMessage({valid: !validate(toDict(forms.payment))});
    return true;
  }
  return false;
});
